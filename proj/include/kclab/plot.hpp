#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kclab/analytics.hpp"
#include "kclab/util/csv.hpp"

namespace kclab {

struct PlotRow {
  int opportunity = 1;
  std::optional<double> empirical;
  std::optional<double> powerlaw;
  std::optional<double> afm;
};

struct PlotData {
  std::string title;
  std::vector<PlotRow> rows;  // ascending opportunity
};

/// AFM inputs for the predicted-error series: parameters and the training
/// students whose mean prediction is plotted.
struct AfmSeries {
  const AFMParams* params = nullptr;
  std::vector<std::string> students;
};

/// One KC: empirical points, the fit over its range, the AFM mean error.
PlotData per_kc_plot(const LearningCurve& curve, const std::optional<PowerLawFit>& fit, const AfmSeries& afm,
                     std::optional<int> max_opportunity);

/// Means across KCs at each opportunity (see aggregate_curves); the AFM series
/// averages the per-KC mean error over KCs with a point at n.
PlotData aggregated_plot(const std::vector<LearningCurve>& curves, const std::vector<std::optional<PowerLawFit>>& fits,
                         const AfmSeries& afm, std::optional<int> max_opportunity);

csv::Writer plot_csv(const PlotData& plot);
std::string render_svg(const PlotData& plot);

}  // namespace kclab
