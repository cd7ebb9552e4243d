#include "tpn/report.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "tpn/errors.hpp"

namespace tpn {

namespace {

using Json = nlohmann::ordered_json;

Json metrics_json(const ViewMetrics& v) {
  return Json{{"l2", v.l2}, {"psnr", v.psnr}, {"ms_ssim", v.ms_ssim}, {"id", v.id}};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IntegrityError("cannot write " + path.string());
  f << text;
}

}  // namespace

std::string report_jsonl(const EvalReport& report) {
  std::string out;
  for (const auto& row : report.rows) {
    Json j;
    j["method"] = row.method;
    j["seed"] = report.seed;
    j["scenes"] = report.n_scenes;
    j["same_view"] = metrics_json(row.same_view);
    Json novel = Json::array();
    for (const auto& v : row.novel) {
      Json m = metrics_json(v);
      m["yaw_offset"] = v.yaw_offset;
      novel.push_back(std::move(m));
    }
    j["novel_views"] = std::move(novel);
    j["novel_average"] = metrics_json(row.novel_average);
    j["scene_psnr"] = row.scene_psnr;
    out += j.dump() + "\n";
  }
  return out;
}

std::string report_table(const EvalReport& report) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head{"method", "L2", "PSNR", "MS-SSIM", "ID"};
  for (double y : report.yaw_offsets) head.push_back("yaw " + fmt("%+.1f", y));
  head.push_back("novel avg");
  cells.push_back(head);
  for (const auto& row : report.rows) {
    std::vector<std::string> r{row.method, fmt("%.5f", row.same_view.l2), fmt("%.2f", row.same_view.psnr),
                               fmt("%.4f", row.same_view.ms_ssim), fmt("%.4f", row.same_view.id)};
    for (const auto& v : row.novel) r.push_back(fmt("%.2f", v.psnr));
    r.push_back(fmt("%.2f", row.novel_average.psnr));
    cells.push_back(std::move(r));
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& r : cells) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out = "same-view metrics and novel-view PSNR (dB) over " + std::to_string(report.n_scenes) +
                    " held-out scenes, seed " + std::to_string(report.seed) + "\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const auto& s = cells[i][c];
      const std::string pad(width[c] - s.size(), ' ');
      out += c == 0 ? s + pad : "  " + pad + s;
    }
    out += "\n";
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
      out += std::string(total, '-') + "\n";
    }
  }
  return out;
}

std::string report_timing(const EvalReport& report) {
  std::string out = "method  seconds_per_image\n";
  for (const auto& row : report.rows) out += row.method + "  " + fmt("%.4f", row.seconds) + "\n";
  return out;
}

void write_report(const EvalReport& report, const std::filesystem::path& jsonl_path) {
  auto stem = jsonl_path;
  stem.replace_extension();
  write_text(jsonl_path, report_jsonl(report));
  write_text(stem.string() + ".txt", report_table(report));
  write_text(stem.string() + ".timing.txt", report_timing(report));
}

}  // namespace tpn
