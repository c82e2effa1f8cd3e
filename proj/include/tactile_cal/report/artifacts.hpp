#pragma once

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "tactile_cal/core/grid_file.hpp"
#include "tactile_cal/core/png_io.hpp"
#include "tactile_cal/core/text.hpp"
#include "tactile_cal/eval.hpp"
#include "tactile_cal/report/plot.hpp"

namespace tactile_cal::report {

namespace detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return text::format_double(v);
}

inline std::string pct(double P) { return text::format_fixed(P * 100.0, 2) + "%"; }

inline std::string tag(double P, std::uint64_t seed) {
  return "P" + text::format_fixed(P * 100.0, 2) + "_s" + std::to_string(seed);
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace detail

/// Per-coordinate MSE laid out on the probe grid (NaN where no value).
inline Array2D<double> mse_grid(const plan::ProbePlan& p, const eval::MseDistribution& d) {
  if (!(p.spacing_mm > 0.0) || !(p.extent.width_mm > 0.0)) {
    throw InvalidArgument("plan carries no grid metadata");
  }
  const auto nx = plan::grid_count(p.extent.width_mm, p.spacing_mm);
  const auto ny = plan::grid_count(p.extent.height_mm, p.spacing_mm);
  Array2D<double> g(ny, nx, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < d.values.size(); ++k) {
    const auto c = static_cast<std::size_t>(std::lround(d.points[k].x_mm / p.spacing_mm));
    const auto r = static_cast<std::size_t>(std::lround(d.points[k].y_mm / p.spacing_mm));
    if (r < ny && c < nx) g(r, c) = d.values[k];
  }
  return g;
}

/// Writes the ablation tables (long format) and figures into `dir`:
///   loss_curves.csv/.png, mse_per_coordinate.csv, mse_map_<tag>.png,
///   mse_kde.csv, mse_hist.csv, mse_kde.png, sigma.csv/.png, tests.csv,
///   summary.txt. Returns the summary text.
inline std::string write_ablation_report(const eval::AblationReport& rep, const plan::ProbePlan& plan,
                                         const std::filesystem::path& dir) {
  detail::ensure_dir(dir);
  using detail::num;

  std::ostringstream loss, coords, kde, hist, sigma, tests;
  loss << "fraction_P,seed,epoch,split,mse\n";
  coords << "fraction_P,seed,plan_index,x_mm,y_mm,mse\n";
  kde << "fraction_P,seed,mse,density\n";
  hist << "fraction_P,seed,bin_left,bin_right,count\n";
  sigma << "fraction_P,seed,epochs,train_coordinates,val_coordinates,excluded_outside_fov,mean,sigma\n";
  tests << "fraction_P,reference_P,seed,method,statistic,df,p_value,threshold,significant\n";

  std::vector<Series> loss_series, kde_series;
  std::vector<VerticalMarker> means;
  for (std::size_t k = 0; k < rep.runs.size(); ++k) {
    const auto& r = rep.runs[k];
    const auto P = num(r.fraction_P);
    Series tr{"train " + detail::pct(r.fraction_P), {}, {}, palette(k), false, false};
    Series va{"val " + detail::pct(r.fraction_P), {}, {}, palette(k), true, true};
    for (std::size_t e = 0; e < r.history.train_mse.size(); ++e) {
      loss << P << ',' << r.seed << ',' << e << ",train," << num(r.history.train_mse[e]) << '\n';
      loss << P << ',' << r.seed << ',' << e << ",val," << num(r.history.val_mse[e]) << '\n';
      // Epochs scaled by the fraction so every run spans the same step budget.
      const double x = static_cast<double>(e + 1) / static_cast<double>(r.epochs);
      tr.x.push_back(x);
      tr.y.push_back(r.history.train_mse[e]);
      if (std::isfinite(r.history.val_mse[e])) {
        va.x.push_back(x);
        va.y.push_back(r.history.val_mse[e]);
      }
    }
    loss_series.push_back(std::move(tr));
    loss_series.push_back(std::move(va));

    const auto& d = r.mse;
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      coords << P << ',' << r.seed << ',' << d.plan_indices[i] << ',' << num(d.points[i].x_mm) << ','
             << num(d.points[i].y_mm) << ',' << num(d.values[i]) << '\n';
    }
    for (std::size_t i = 0; i < d.kde.support.size(); ++i) {
      kde << P << ',' << r.seed << ',' << num(d.kde.support[i]) << ',' << num(d.kde.density[i]) << '\n';
    }
    for (std::size_t i = 0; i < d.hist.counts.size(); ++i) {
      const double left = d.hist.origin + static_cast<double>(i) * d.hist.bin_width;
      hist << P << ',' << r.seed << ',' << num(left) << ',' << num(left + d.hist.bin_width) << ','
           << d.hist.counts[i] << '\n';
    }
    sigma << P << ',' << r.seed << ',' << r.epochs << ',' << r.train_coordinates << ',' << d.values.size() << ','
          << d.excluded_outside_fov << ',' << num(d.mean) << ',' << num(d.sigma) << '\n';
    kde_series.push_back({detail::pct(r.fraction_P), d.kde.support, d.kde.density, palette(k), false, false});
    means.push_back({d.mean, palette(k)});

    if (plan.spacing_mm > 0.0 && plan.extent.width_mm > 0.0) {
      HeatmapOptions ho;
      ho.title = "VAL MSE P=" + detail::pct(r.fraction_P);
      ho.cell = 8;
      save_png(dir / ("mse_map_" + detail::tag(r.fraction_P, r.seed) + ".png"), heatmap(mse_grid(plan, d), ho));
    }
  }
  for (const auto& c : rep.comparisons) {
    for (const auto* t : {&c.t, &c.u}) {
      tests << num(c.fraction_P) << ',' << num(c.reference_P) << ',' << c.seed << ',' << t->method << ','
            << num(t->statistic) << ',' << num(t->df) << ',' << num(t->p_value) << ',' << num(eval::kCorrectedAlpha)
            << ',' << (t->significant ? 1 : 0) << '\n';
    }
  }

  write_text_file(dir / "loss_curves.csv", loss.str());
  write_text_file(dir / "mse_per_coordinate.csv", coords.str());
  write_text_file(dir / "mse_kde.csv", kde.str());
  write_text_file(dir / "mse_hist.csv", hist.str());
  write_text_file(dir / "sigma.csv", sigma.str());
  write_text_file(dir / "tests.csv", tests.str());

  LinePlotOptions lo;
  lo.title = "LOSS";
  lo.x_label = "fraction of training budget";
  lo.y_label = "MSE (log)";
  lo.log_y = true;
  save_png(dir / "loss_curves.png", line_plot(loss_series, lo));

  LinePlotOptions ko;
  ko.title = "MSE KDE";
  ko.x_label = "per-coordinate MSE";
  ko.y_label = "density";
  ko.markers = means;
  save_png(dir / "mse_kde.png", line_plot(kde_series, ko));

  // sigma vs P, one series per seed.
  std::vector<std::uint64_t> seeds;
  for (const auto& r : rep.runs) {
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }
  std::vector<Series> sig;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    Series s{"seed " + std::to_string(seeds[k]), {}, {}, palette(k), false, true};
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : rep.runs) {
      if (r.seed == seeds[k]) pts.emplace_back(r.fraction_P * 100.0, r.mse.sigma);
    }
    std::sort(pts.begin(), pts.end());
    for (const auto& [x, y] : pts) {
      s.x.push_back(x);
      s.y.push_back(y);
    }
    sig.push_back(std::move(s));
  }
  LinePlotOptions so;
  so.title = "SIGMA VS P";
  so.x_label = "P (%)";
  so.y_label = "sigma of per-coordinate MSE";
  save_png(dir / "sigma.png", line_plot(sig, so));

  std::ostringstream sum;
  sum << "ablation: " << rep.runs.size() << " runs, reference P = " << detail::pct(rep.reference_P)
      << ", shared validation coordinates = " << rep.val_indices.size() << '\n';
  for (const auto& r : rep.runs) {
    sum << "  P=" << detail::pct(r.fraction_P) << " seed=" << r.seed << " epochs=" << r.epochs
        << " train_coords=" << r.train_coordinates << " val_coords=" << r.mse.values.size()
        << " mean=" << num(r.mse.mean) << " sigma=" << num(r.mse.sigma) << '\n';
  }
  sum << "tests (threshold p < " << num(eval::kCorrectedAlpha) << "):\n";
  for (const auto& c : rep.comparisons) {
    sum << "  P=" << detail::pct(c.fraction_P) << " vs " << detail::pct(c.reference_P) << " seed=" << c.seed << ": "
        << c.t.method << " t=" << num(c.t.statistic) << " p=" << num(c.t.p_value)
        << (c.t.significant ? " significant" : "") << "; U=" << num(c.u.statistic) << " p=" << num(c.u.p_value)
        << (c.u.significant ? " significant" : "") << '\n';
  }
  write_text_file(dir / "summary.txt", sum.str());
  return sum.str();
}

struct NamedEvaluation {
  std::string name;
  eval::ObjectEvaluation eval;
  DepthMap prediction;
};

/// Error table (overall / type 1 / type 2 in um), violins, and per-object
/// depth, ground-truth and error heatmaps.
inline std::string write_object_report(const std::vector<NamedEvaluation>& objects, const std::filesystem::path& dir) {
  detail::ensure_dir(dir);
  using detail::num;
  std::ostringstream table, sum;
  table << "object,overall_um,type1_um,type2_um,n_type1,n_type2,shift_x_px,shift_y_px,scale,scale_clamped,"
           "offset_mm,max_gt_depth_um\n";
  std::vector<ViolinGroup> groups;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto& o = objects[k];
    const auto& r = o.eval.report;
    const double max_gt = o.eval.max_gt_depth_mm * 1000.0;
    table << o.name << ',' << num(r.overall_um) << ',' << num(r.type1_um) << ',' << num(r.type2_um) << ','
          << r.n_type1 << ',' << r.n_type2 << ',' << o.eval.shift.dx << ',' << o.eval.shift.dy << ','
          << num(o.eval.scale.scale) << ',' << (o.eval.scale.clamped ? 1 : 0) << ',' << num(o.eval.offset_mm) << ','
          << num(max_gt) << '\n';
    sum << o.name << ": overall " << text::format_fixed(r.overall_um, 3) << " um, type 1 "
        << text::format_fixed(r.type1_um, 3) << " um, type 2 " << text::format_fixed(r.type2_um, 3)
        << " um, overall / max depth = " << text::format_fixed(100.0 * r.overall_um / max_gt, 2) << "%"
        << (o.eval.scale.clamped ? " (depth scale clamped)" : "") << '\n';
    const auto v = eval::violin_data(r);
    groups.push_back({o.name + " T1", v.type1_um, palette(2 * k)});
    groups.push_back({o.name + " T2", v.type2_um, palette(2 * k + 1)});

    HeatmapOptions ho;
    ho.cell = 3;
    ho.units = "mm";
    ho.title = o.name + " PRED";
    save_png(dir / (o.name + "_pred.png"), heatmap(o.prediction.values, ho));
    ho.title = o.name + " GT";
    save_png(dir / (o.name + "_gt.png"), heatmap(o.eval.aligned_gt.values, ho));
    ho.title = o.name + " ERR";
    ho.units = "um";
    save_png(dir / (o.name + "_error.png"), heatmap(r.error_um, ho));
    save_grid(dir / (o.name + "_pred.grid"), to_grid(o.prediction));
  }
  write_text_file(dir / "errors.csv", table.str());
  if (!groups.empty()) {
    ViolinOptions vo;
    vo.title = "DEPTH ERROR";
    vo.y_label = "abs error (um), type 1 cut at p95";
    save_png(dir / "error_violins.png", violin_plot(groups, vo));
  }
  write_text_file(dir / "summary.txt", sum.str());
  return sum.str();
}

}  // namespace tactile_cal::report
