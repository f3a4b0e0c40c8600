#include "cite/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "cite/error.hpp"
#include "cite/evaluation.hpp"
#include "cite/training.hpp"

namespace cite {

std::vector<SweepCell> k_sweep(const GroundingDataset& ds, const RunConfig& base, std::span<const std::size_t> ks,
                               std::span<const AssignmentMethod> methods, std::span<const std::uint64_t> seeds,
                               const std::function<void(const SweepCell&)>& on_cell) {
  std::vector<SweepCell> cells;
  for (AssignmentMethod method : methods) {
    for (std::size_t k : ks) {
      for (std::uint64_t seed : seeds) {
        SweepCell cell;
        cell.k = k;
        cell.method = method;
        cell.seed = seed;
        try {
          RunConfig cfg = base;
          cfg.num_embeddings = k;
          cfg.train.assignment = method;
          cfg.train.seed = seed;
          const TrainResult r = train(ds, cfg);
          cell.val_accuracy = r.best_val_accuracy;
          cell.epochs = r.log.size();
          if (ds.has_split(Split::kTest)) {
            cell.test_accuracy = accuracy(r.model, ds, Split::kTest, cfg.proposals_per_image).accuracy;
          }
        } catch (const Error& e) {
          cell.error = e.what();
        }
        if (on_cell) on_cell(cell);
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

std::string sweep_csv(std::span<const SweepCell> cells) {
  std::string out = "k,method,seed,val_accuracy,test_accuracy,epochs,status\n";
  char buf[512];
  for (const auto& c : cells) {
    std::string status = c.error.empty() ? "ok" : c.error;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    std::snprintf(buf, sizeof buf, "%zu,%s,%llu,%.6f,%.6f,%zu,", c.k, method_name(c.method),
                  static_cast<unsigned long long>(c.seed), c.val_accuracy, c.test_accuracy, c.epochs);
    out += buf;
    out += status + "\n";
  }
  return out;
}

std::string sweep_svg(std::span<const SweepCell> cells) {
  // method -> k -> (sum, count)
  std::map<std::string, std::map<std::size_t, std::pair<double, std::size_t>>> series;
  std::size_t k_max = 1;
  for (const auto& c : cells) {
    if (!c.error.empty()) continue;
    auto& slot = series[method_name(c.method)][c.k];
    slot.first += c.test_accuracy;
    ++slot.second;
    k_max = std::max(k_max, c.k);
  }
  const double W = 480, H = 320, L = 50, R = 20, T = 20, B = 40;
  auto px = [&](double k) { return L + (W - L - R) * (k_max == 1 ? 0.5 : (k - 1) / double(k_max - 1)); };
  auto py = [&](double a) { return T + (H - T - B) * (1.0 - a); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n", W, H);
  s += buf;
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.0f\" y=\"%.0f\" width=\"%.0f\" height=\"%.0f\" fill=\"none\" stroke=\"#333\"/>\n", L, T,
                W - L - R, H - T - B);
  s += buf;
  for (int i = 0; i <= 4; ++i) {
    const double a = i / 4.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.0f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"end\">%.2f</text>\n", L - 4,
                  py(a) + 3, a);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.0f\" y=\"%.0f\" font-size=\"11\" text-anchor=\"middle\">K</text>\n",
                (L + W - R) / 2, H - 6);
  s += buf;
  std::size_t ci = 0;
  for (const auto& [method, by_k] : series) {
    const char* color = colors[ci % 4];
    std::string pts;
    for (const auto& [k, acc] : by_k) {
      const double mean = acc.first / static_cast<double>(acc.second);
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(static_cast<double>(k)), py(mean));
      pts += buf;
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n",
                    px(static_cast<double>(k)), py(mean), color);
      s += buf;
      std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.0f\" font-size=\"10\" text-anchor=\"middle\">%zu</text>\n",
                    px(static_cast<double>(k)), H - B + 14, k);
      s += buf;
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" points=\"" + pts + "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.0f\" y=\"%.0f\" font-size=\"11\" fill=\"%s\">%s</text>\n", L + 8,
                  T + 14 + 14.0 * static_cast<double>(ci), color, method.c_str());
    s += buf;
    ++ci;
  }
  s += "</svg>\n";
  return s;
}

}  // namespace cite
