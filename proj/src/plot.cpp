#include "kclab/plot.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "kclab/error.hpp"
#include "kclab/util/format.hpp"

namespace kclab {

namespace {

std::optional<double> afm_error(const AfmSeries& afm, const KcId& kc, int n) {
  if (!afm.params || !afm.params->beta.count(kc)) return std::nullopt;
  return afm_mean_error(*afm.params, afm.students, kc, n);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) { return format_fixed(v, 2); }

}  // namespace

PlotData per_kc_plot(const LearningCurve& curve, const std::optional<PowerLawFit>& fit, const AfmSeries& afm,
                     std::optional<int> max_opportunity) {
  PlotData plot{"Learning curve: " + curve.kc_id, {}};
  for (const auto& p : curve.points) {
    if (max_opportunity && p.opportunity > *max_opportunity) break;
    PlotRow row{p.opportunity, p.error_rate, std::nullopt, afm_error(afm, curve.kc_id, p.opportunity)};
    if (fit && fit->covers(p.opportunity)) row.powerlaw = fit->predict(p.opportunity);
    plot.rows.push_back(row);
  }
  return plot;
}

PlotData aggregated_plot(const std::vector<LearningCurve>& curves, const std::vector<std::optional<PowerLawFit>>& fits,
                         const AfmSeries& afm, std::optional<int> max_opportunity) {
  PlotData plot{"Learning curve averaged over " + std::to_string(curves.size()) + " KCs", {}};
  std::map<int, std::pair<double, int>> afm_acc;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      if (auto e = afm_error(afm, c.kc_id, p.opportunity)) {
        afm_acc[p.opportunity].first += *e;
        ++afm_acc[p.opportunity].second;
      }
    }
  }
  for (const auto& a : aggregate_curves(curves, fits)) {
    if (max_opportunity && a.opportunity > *max_opportunity) break;
    PlotRow row{a.opportunity, a.empirical, a.fitted, std::nullopt};
    if (const auto it = afm_acc.find(a.opportunity); it != afm_acc.end()) {
      row.afm = it->second.first / it->second.second;
    }
    plot.rows.push_back(row);
  }
  return plot;
}

csv::Writer plot_csv(const PlotData& plot) {
  csv::Writer w({"opportunity", "empirical", "powerlaw", "afm"});
  const auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& r : plot.rows) {
    w.row({std::to_string(r.opportunity), cell(r.empirical), cell(r.powerlaw), cell(r.afm)});
  }
  return w;
}

std::string render_svg(const PlotData& plot) {
  if (plot.rows.empty()) throw PreconditionError("plot '" + plot.title + "' has no points");
  constexpr double width = 720, height = 440, left = 60, right = 170, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  const int n_min = plot.rows.front().opportunity;
  const int n_max = std::max(plot.rows.back().opportunity, n_min + 1);
  double y_max = 0.0;
  for (const auto& r : plot.rows) {
    for (const auto& v : {r.empirical, r.powerlaw, r.afm}) {
      if (v) y_max = std::max(y_max, *v);
    }
  }
  y_max = std::max(0.2, std::ceil(y_max * 5.0) / 5.0);
  const auto sx = [&](double n) { return left + (n - n_min) / (n_max - n_min) * pw; };
  const auto sy = [&](double e) { return top + (1.0 - e / y_max) * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"440\" viewBox=\"0 0 720 440\" "
       "font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"720\" height=\"440\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" +
       xml_escape(plot.title) + "</text>\n";
  s += "<g stroke=\"#333\" fill=\"none\">\n";
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top + ph) + "\" x2=\"" + num(left + pw) + "\" y2=\"" +
       num(top + ph) + "\"/>\n";
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" + num(top + ph) +
       "\"/>\n</g>\n";

  const int span = n_max - n_min;
  const int step = std::max(1, (span + 9) / 10);
  s += "<g fill=\"#333\">\n";
  for (int n = n_min; n <= n_max; n += step) {
    s += "<text x=\"" + num(sx(n)) + "\" y=\"" + num(top + ph + 18) + "\" text-anchor=\"middle\">" +
         std::to_string(n) + "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double e = y_max * i / 5.0;
    s += "<text x=\"" + num(left - 8) + "\" y=\"" + num(sy(e) + 4) + "\" text-anchor=\"end\">" + format_fixed(e, 2) +
         "</text>\n";
  }
  s += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(height - 10) +
       "\" text-anchor=\"middle\">Opportunity</text>\n";
  s += "<text transform=\"translate(16 " + num(top + ph / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">Error rate</text>\n</g>\n";

  struct Series {
    const char* name;
    const char* color;
    const char* dash;
    std::optional<double> PlotRow::*field;
  };
  const Series series[] = {{"Empirical", "#1f77b4", "", &PlotRow::empirical},
                           {"Power law", "#d62728", "6 4", &PlotRow::powerlaw},
                           {"AFM", "#2ca02c", "2 3", &PlotRow::afm}};
  int legend = 0;
  for (const auto& se : series) {
    std::string pts;
    int count = 0;
    for (const auto& r : plot.rows) {
      if (!(r.*se.field)) continue;
      pts += (pts.empty() ? "" : " ") + num(sx(r.opportunity)) + "," + num(sy(*(r.*se.field)));
      ++count;
    }
    if (count == 0) continue;
    s += "<polyline fill=\"none\" stroke=\"" + std::string(se.color) + "\" stroke-width=\"2\"";
    if (*se.dash) s += " stroke-dasharray=\"" + std::string(se.dash) + "\"";
    s += " points=\"" + pts + "\"/>\n";
    const double ly = top + 10 + 20 * legend++;
    s += "<line x1=\"" + num(left + pw + 16) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(left + pw + 46) + "\" y2=\"" +
         num(ly) + "\" stroke=\"" + se.color + "\" stroke-width=\"2\"";
    if (*se.dash) s += " stroke-dasharray=\"" + std::string(se.dash) + "\"";
    s += "/>\n<text x=\"" + num(left + pw + 52) + "\" y=\"" + num(ly + 4) + "\">" + se.name + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace kclab
