#include "xedit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace xedit::metrics {

namespace fs = std::filesystem;

double mse(const Image& pred, const Image& gt) {
  if (!pred.same_size(gt)) {
    throw MetricError("mse: image sizes differ (" + std::to_string(pred.height) + "x" +
                      std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                      std::to_string(gt.width) + ")");
  }
  if (pred.pixels.empty()) throw MetricError("mse: empty images");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const double d = double(pred.pixels[i]) - double(gt.pixels[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.pixels.size());
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw MetricError("cosine: feature sizes differ");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw MetricError("cosine: zero-norm feature vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

double clip_i(const Image& pred, const Image& gt, const FeatureExtractor& encoder) {
  return cosine(encoder(pred), encoder(gt));
}

namespace {

template <class A, class B>
void same_length(const A& a, const B& b, const char* what) {
  if (a.size() != b.size()) {
    throw MetricError(std::string(what) + ": inputs differ in size (" + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw MetricError(std::string(what) + ": empty input");
}

}  // namespace

PRF edge_prf(const std::vector<double>& pred, const std::vector<double>& gt) {
  same_length(pred, gt, "edge_prf");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= 0.5, g = gt[i] >= 0.5;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  PRF r;
  const bool gt_empty = tp + fn == 0;
  r.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : (gt_empty ? 1.0 : 0.0);
  r.recall = gt_empty ? 1.0 : double(tp) / double(tp + fn);
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

SegScores seg_scores(const std::vector<int>& pred, const std::vector<int>& gt,
                     std::size_t n_classes) {
  same_length(pred, gt, "seg_scores");
  if (n_classes == 0) throw MetricError("seg_scores: n_classes must be positive");
  std::vector<std::size_t> conf(n_classes * n_classes, 0);  // [gt][pred]
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int v : {pred[i], gt[i]}) {
      if (v < 0 || static_cast<std::size_t>(v) >= n_classes) {
        throw MetricError("seg_scores: label " + std::to_string(v) + " outside [0, " +
                          std::to_string(n_classes) + ")");
      }
    }
    ++conf[std::size_t(gt[i]) * n_classes + std::size_t(pred[i])];
  }
  std::size_t diag = 0;
  double acc_sum = 0, iou_sum = 0;
  std::size_t acc_n = 0, iou_n = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::size_t tp = conf[c * n_classes + c];
    std::size_t gt_c = 0, pred_c = 0;
    for (std::size_t k = 0; k < n_classes; ++k) {
      gt_c += conf[c * n_classes + k];
      pred_c += conf[k * n_classes + c];
    }
    diag += tp;
    if (gt_c > 0) {
      acc_sum += double(tp) / double(gt_c);
      ++acc_n;
    }
    if (gt_c + pred_c > 0) {
      iou_sum += double(tp) / double(gt_c + pred_c - tp);
      ++iou_n;
    }
  }
  SegScores s;
  s.pixel_acc = double(diag) / double(pred.size());
  s.mean_acc = acc_sum / double(acc_n);
  s.mean_iou = iou_sum / double(iou_n);
  return s;
}

double depth_delta1(const std::vector<double>& pred, const std::vector<double>& gt,
                    double threshold) {
  same_length(pred, gt, "depth_delta1");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(pred[i] > 0.0) || !(gt[i] > 0.0)) {
      throw MetricError("depth_delta1: nonpositive depth at index " + std::to_string(i));
    }
    hit += std::max(pred[i] / gt[i], gt[i] / pred[i]) < threshold;
  }
  return double(hit) / double(pred.size());
}

AngularStats normal_angular(const std::vector<double>& pred, const std::vector<double>& gt) {
  same_length(pred, gt, "normal_angular");
  if (pred.size() % 3 != 0) throw MetricError("normal_angular: length is not a multiple of 3");
  const std::size_t n = pred.size() / 3;
  std::vector<double> ang(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = &pred[3 * i];
    const double* g = &gt[3 * i];
    const double np = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    const double ng = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (np == 0.0 || ng == 0.0) {
      throw MetricError("normal_angular: zero vector at pixel " + std::to_string(i));
    }
    const double dot = (p[0] * g[0] + p[1] * g[1] + p[2] * g[2]) / (np * ng);
    const double deg = std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / 3.14159265358979323846;
    // Snap to 1e-9 degree so an exactly 30 degree error is not read as 29.999...
    ang[i] = std::round(deg * 1e9) / 1e9;
  }
  AngularStats s;
  s.mean_deg = std::accumulate(ang.begin(), ang.end(), 0.0) / double(n);
  auto sorted = ang;
  std::sort(sorted.begin(), sorted.end());
  s.median_deg = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  auto frac = [&](double thr) {
    return double(std::count_if(ang.begin(), ang.end(), [thr](double a) { return a < thr; })) /
           double(n);
  };
  s.within_11_25 = frac(11.25);
  s.within_22_5 = frac(22.5);
  s.within_30 = frac(30.0);
  return s;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd r;
  r.n = values.size();
  if (values.empty()) return r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(r.n);
  if (r.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / double(r.n - 1));
  }
  return r;
}

std::vector<int> quantize_to_palette(const Image& img,
                                     const std::vector<std::array<float, 3>>& palette) {
  if (palette.empty()) throw MetricError("quantize_to_palette: empty palette");
  std::vector<int> out(img.height * img.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float best = 1e30f;
    for (std::size_t k = 0; k < palette.size(); ++k) {
      float d = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const float e = img.pixels[3 * i + c] - palette[k][c];
        d += e * e;
      }
      if (d < best) {
        best = d;
        out[i] = static_cast<int>(k);
      }
    }
  }
  return out;
}

void MetricReport::aggregate() {
  per_task.clear();
  per_category.clear();
  overall.clear();
  for (const auto& m : metrics) {
    std::map<std::string, std::vector<double>> by_task, by_cat;
    std::vector<double> all;
    for (const auto& inst : instances) {
      const auto it = inst.values.find(m.name);
      if (it == inst.values.end()) continue;
      by_task[inst.task].push_back(it->second);
      by_cat[inst.category].push_back(it->second);
      all.push_back(it->second);
    }
    for (const auto& [k, v] : by_task) per_task[k][m.name] = mean_std(v);
    for (const auto& [k, v] : by_cat) per_category[k][m.name] = mean_std(v);
    overall[m.name] = mean_std(all);
  }
}

std::string direction_marker(bool lower_is_better) { return lower_is_better ? "↓" : "↑"; }

std::string MetricReport::to_json() const {
  using nlohmann::json;
  auto stats = [](const std::map<std::string, MeanStd>& m) {
    json j = json::object();
    for (const auto& [k, s] : m) j[k] = {{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
    return j;
  };
  json j;
  j["method"] = method;
  j["split"] = split;
  j["metrics"] = json::array();
  for (const auto& m : metrics) {
    j["metrics"].push_back({{"name", m.name},
                            {"direction", direction_marker(m.lower_is_better)},
                            {"lower_is_better", m.lower_is_better}});
  }
  j["overall"] = stats(overall);
  j["per_category"] = json::object();
  for (const auto& [k, v] : per_category) j["per_category"][k] = stats(v);
  j["per_task"] = json::object();
  for (const auto& [k, v] : per_task) j["per_task"][k] = stats(v);
  j["instances"] = json::array();
  for (const auto& i : instances) {
    j["instances"].push_back({{"task_id", i.task_id},
                              {"task", i.task},
                              {"category", i.category},
                              {"seen", i.seen},
                              {"values", i.values}});
  }
  j["notes"] = notes;
  return j.dump(2) + "\n";
}

namespace {

std::string fmt_stat(const MeanStd& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << s.mean << " ± " << s.std;
  return os.str();
}

// Pads by code points so the multi-byte markers do not skew columns.
std::string pad(const std::string& s, std::size_t width, bool left) {
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  const std::string fill(width > cps ? width - cps : 0, ' ');
  return left ? s + fill : fill + s;
}

std::string table(const std::vector<MetricSpec>& metrics,
                  const std::vector<std::pair<std::string, std::map<std::string, MeanStd>>>& rows) {
  std::size_t w0 = 6;
  for (const auto& r : rows) w0 = std::max(w0, r.first.size());
  const std::size_t wc = 20;
  std::ostringstream os;
  os << pad("method", w0, true);
  for (const auto& m : metrics) os << "  " << pad(m.name + " " + direction_marker(m.lower_is_better), wc, false);
  os << '\n';
  for (const auto& [name, vals] : rows) {
    os << pad(name, w0, true);
    for (const auto& m : metrics) {
      const auto it = vals.find(m.name);
      const bool empty = it == vals.end() || it->second.n == 0;
      os << "  " << pad(empty ? "-" : fmt_stat(it->second), wc, false);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::string MetricReport::to_table() const {
  std::vector<std::pair<std::string, std::map<std::string, MeanStd>>> rows;
  rows.emplace_back(method + " (" + split + ")", overall);
  for (const auto& [k, v] : per_category) rows.emplace_back("  " + k, v);
  for (const auto& [k, v] : per_task) rows.emplace_back("    " + k, v);
  std::string out = table(metrics, rows);
  for (const auto& n : notes) out += "note: " + n + "\n";
  return out;
}

std::string comparison_table(const std::vector<MetricReport>& reports) {
  if (reports.empty()) return {};
  std::vector<std::pair<std::string, std::map<std::string, MeanStd>>> rows;
  for (const auto& r : reports) {
    rows.emplace_back(r.method + " -" + (r.split == "unseen" ? "U" : "S"), r.overall);
  }
  return table(reports.front().metrics, rows);
}

const std::string& judge_prompt_text() {
  static const std::string text =
      "Scoring protocol for paired edit predictions.\n"
      "\n"
      "composite.ppm tiles five images in a 2-column, 3-row grid:\n"
      "  column 1, top to bottom: A (exemplar before), A1 (exemplar after), B (query image)\n"
      "  column 2, top to bottom: B1 (prediction 1), B2 (prediction 2), empty tile\n"
      "\n"
      "Rate B1 and B2 separately on two integer scales from 1 to 5:\n"
      "  consistency: how well the prediction keeps the content, layout and colors of B\n"
      "               that the exemplar edit leaves untouched.\n"
      "  accuracy:    how closely the change from B to the prediction matches the change\n"
      "               from A to A1 in kind, location and strength.\n"
      "Break ties unless the two predictions cannot be told apart.\n"
      "\n"
      "Answer with JSON only, using this schema:\n"
      "{ \"B1\": {\"consistency\":<1-5>, \"accuracy\":<1-5>}, \"B2\": {\"consistency\":<1-5>, "
      "\"accuracy\":<1-5>} }\n";
  return text;
}

void export_judge_bundle(const Image& prompt, const Image& reference, const Image& source,
                         const Image& pred1, const Image& pred2, const fs::path& out_dir) {
  for (const Image* im : {&reference, &source, &pred1, &pred2}) {
    if (!im->same_size(prompt)) throw MetricError("judge bundle: all five images must share a size");
  }
  const std::size_t th = prompt.height, tw = prompt.width;
  Image comp(3 * th, 2 * tw, 0.0f);
  const Image* cells[3][2] = {{&prompt, &pred1}, {&reference, &pred2}, {&source, nullptr}};
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      if (!cells[r][c]) continue;
      for (std::size_t y = 0; y < th; ++y)
        for (std::size_t x = 0; x < tw; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch)
            comp.at(r * th + y, c * tw + x, ch) = cells[r][c]->at(y, x, ch);
    }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + out_dir.string() + "': " + ec.message());
  write_ppm(out_dir / "composite.ppm", comp);
  {
    std::ofstream os(out_dir / "prompt.txt", std::ios::binary | std::ios::trunc);
    os << judge_prompt_text();
    if (!os) throw std::runtime_error("cannot write '" + (out_dir / "prompt.txt").string() + "'");
  }
  std::ofstream os(out_dir / "scores.json", std::ios::binary | std::ios::trunc);
  os << "{\n  \"B1\": {\"consistency\": null, \"accuracy\": null},\n"
        "  \"B2\": {\"consistency\": null, \"accuracy\": null},\n"
        "  \"source\": \"external judge, fill in manually\"\n}\n";
  if (!os) throw std::runtime_error("cannot write '" + (out_dir / "scores.json").string() + "'");
}

}  // namespace xedit::metrics
