#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "tactile_cal/report.hpp"

using namespace tactile_cal;
using namespace tactile_cal::report;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Rgb pixel(const TactileImage& img, std::size_t x, std::size_t y) {
  return {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
}

std::size_t count_color(const TactileImage& img, Rgb c) {
  std::size_t n = 0;
  for (std::size_t y = 0; y < img.rows; ++y) {
    for (std::size_t x = 0; x < img.cols; ++x) n += pixel(img, x, y) == c;
  }
  return n;
}

std::size_t csv_rows(const fs::path& p) {
  const auto t = read_text_file(p);
  return static_cast<std::size_t>(std::count(t.begin(), t.end(), '\n'));
}

eval::MseDistribution fake_distribution(const plan::ProbePlan& p, double scale) {
  eval::MseDistribution d;
  for (std::size_t i = 0; i < p.size(); i += 3) {
    d.plan_indices.push_back(i);
    d.points.push_back(p.points[i]);
    d.values.push_back(scale * (1.0 + 0.1 * static_cast<double>(i % 7)));
  }
  return eval::summarize(std::move(d));
}

eval::AblationReport fake_ablation(const plan::ProbePlan& p) {
  eval::AblationReport rep;
  rep.reference_P = 0.8;
  for (std::size_t i = 0; i < p.size(); i += 3) rep.val_indices.push_back(i);
  for (double P : {0.8, 0.05}) {
    eval::AblationRun r;
    r.fraction_P = P;
    r.seed = 3;
    r.epochs = P == 0.8 ? 4 : 8;
    r.train_coordinates = 10;
    for (std::size_t e = 0; e < r.epochs; ++e) {
      r.history.train_mse.push_back(0.01 / static_cast<double>(e + 1));
      r.history.val_mse.push_back(e % 2 ? 0.02 / static_cast<double>(e + 1) : std::nan(""));
    }
    r.mse = fake_distribution(p, P == 0.8 ? 0.001 : 0.004);
    rep.runs.push_back(std::move(r));
  }
  eval::AblationComparison c;
  c.fraction_P = 0.05;
  c.reference_P = 0.8;
  c.seed = 3;
  c.t = eval::welch_t_test(rep.runs[1].mse.values, rep.runs[0].mse.values);
  c.u = eval::mann_whitney_u(rep.runs[1].mse.values, rep.runs[0].mse.values);
  rep.comparisons.push_back(c);
  return rep;
}

}  // namespace

TEST_CASE("canvas primitives clip and draw", "[report]") {
  Canvas cv(20, 10);
  cv.line(-5, 5, 30, 5, kBlack);
  for (int x = 0; x < 20; ++x) CHECK(cv.get(x, 5) == kBlack);
  CHECK(cv.get(0, 0) == kWhite);
  cv.line(0, 0, 9, 9, Rgb{1, 2, 3});
  for (int i = 0; i < 10; ++i) CHECK(cv.get(i, i) == Rgb{1, 2, 3});
  cv.fill_rect(15, 0, 100, 2, Rgb{9, 9, 9});
  CHECK(cv.get(19, 2) == Rgb{9, 9, 9});

  Canvas t(40, 10);
  t.text(1, 1, "1A", kBlack);
  CHECK(count_color(t.image(), kBlack) > 10);
  CHECK(Canvas::text_width("abc") == 17);
  CHECK(glyph('a').ch == 'A');
  CHECK(glyph('@').ch == '?');
}

TEST_CASE("ticks and labels", "[report][property]") {
  for (auto [lo, hi] : {std::pair{0.0, 1.0}, std::pair{-3.2, 17.9}, std::pair{1e-5, 3e-4}, std::pair{100.0, 100.5}}) {
    const auto t = nice_ticks(lo, hi);
    REQUIRE(t.size() >= 2);
    CHECK(t.size() <= 11);
    for (double v : t) {
      CHECK(v >= lo - 1e-12 * std::abs(hi));
      CHECK(v <= hi + 1e-12 * std::abs(hi));
    }
    const double step = t[1] - t[0];
    const double m = step / std::pow(10.0, std::floor(std::log10(step) + 1e-9));
    CHECK((std::abs(m - 1) < 1e-6 || std::abs(m - 2) < 1e-6 || std::abs(m - 5) < 1e-6));
  }
  CHECK(tick_label(0.0) == "0");
  CHECK(tick_label(0.25) == "0.25");
  CHECK(tick_label(2.5e-4) == "0.00025");
  CHECK(tick_label(2.5e-6) == "2.5e-6");
  CHECK(tick_label(3e7) == "3e7");
  CHECK(tick_label(1200.0) == "1200");
  CHECK(colormap(0.0) == Rgb{68, 1, 84});
  CHECK(colormap(1.0) == Rgb{253, 231, 37});
  CHECK(colormap(-1.0) == colormap(0.0));
}

TEST_CASE("line plot draws series and is reproducible", "[report]") {
  Series s{"a", {0, 1, 2, 3}, {1, 4, std::nan(""), 2}, Rgb{200, 0, 0}, false, true};
  Series l{"log", {0, 1, 2}, {1e-3, 1e-2, 1e-1}, Rgb{0, 0, 200}};
  LinePlotOptions o;
  o.title = "T";
  const auto a = line_plot({s}, o);
  CHECK(a.cols == 640);
  CHECK(a.rows == 420);
  CHECK(count_color(a, Rgb{200, 0, 0}) > 50);
  CHECK(encode_png(a) == encode_png(line_plot({s}, o)));
  o.log_y = true;
  const auto b = line_plot({l}, o);
  CHECK(count_color(b, Rgb{0, 0, 200}) > 50);
  CHECK_THROWS_AS(line_plot({Series{"bad", {1, 2}, {1}}}, o), InvalidArgument);
  // Nothing plottable still yields an empty frame.
  CHECK(line_plot({}, {}).cols == 640);
}

TEST_CASE("heatmap maps the range onto the colour ramp", "[report]") {
  Array2D<double> m(3, 4);
  for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = static_cast<double>(i);
  m(1, 1) = std::nan("");
  HeatmapOptions o;
  o.cell = 5;
  const auto img = heatmap(m, o);
  // Cells start at (10, 30).
  CHECK(pixel(img, 10 + 2, 30 + 2) == colormap(0.0));
  CHECK(pixel(img, 10 + 3 * 5 + 2, 30 + 2 * 5 + 2) == colormap(1.0));
  CHECK(pixel(img, 10 + 5 + 2, 30 + 5 + 2) == kMissing);
  CHECK_THROWS_AS(heatmap(Array2D<double>{}, o), InvalidArgument);
}

TEST_CASE("violin plot", "[report]") {
  std::vector<double> a, b;
  for (int i = 0; i < 200; ++i) {
    a.push_back(std::sin(i) * 3.0);
    b.push_back(10.0 + std::cos(i));
  }
  const auto img = violin_plot({{"A", a, Rgb{10, 200, 10}}, {"B", b, Rgb{200, 10, 200}}, {"empty", {}, {}}});
  CHECK(img.cols == 90 + 3 * 140);
  CHECK(count_color(img, Rgb{10, 200, 10}) > 200);
  CHECK(count_color(img, Rgb{200, 10, 200}) > 200);
  CHECK_THROWS_AS(violin_plot({}), InvalidArgument);
}

TEST_CASE("mse_grid places coordinates on the plan grid", "[report]") {
  const auto p = plan::generate_grid({4.0, 2.0}, 1.0, 1.0, 1);
  const auto d = fake_distribution(p, 1.0);
  const auto g = mse_grid(p, d);
  CHECK(g.rows() == 3);
  CHECK(g.cols() == 5);
  for (std::size_t k = 0; k < d.values.size(); ++k) {
    const auto r = static_cast<std::size_t>(d.points[k].y_mm), c = static_cast<std::size_t>(d.points[k].x_mm);
    CHECK(g(r, c) == d.values[k]);
  }
  CHECK(std::isnan(g(0, 1)));
  plan::ProbePlan loose = p;
  loose.spacing_mm = 0.0;
  CHECK_THROWS_AS(mse_grid(loose, d), InvalidArgument);
}

TEST_CASE("ablation artifacts: tables, figures and reproducibility", "[report][io]") {
  TempDir dir("tactile_cal_report_ablation");
  const auto p = plan::generate_grid({6.0, 6.0}, 1.0, 1.0, 2);
  const auto rep = fake_ablation(p);
  const auto summary = write_ablation_report(rep, p, dir.path);
  CHECK(summary.find("P=5%") != std::string::npos);
  for (const char* f : {"loss_curves.csv", "loss_curves.png", "mse_per_coordinate.csv", "mse_kde.csv", "mse_hist.csv",
                        "mse_kde.png", "sigma.csv", "sigma.png", "tests.csv", "summary.txt", "mse_map_P80_s3.png",
                        "mse_map_P5_s3.png"}) {
    INFO(f);
    CHECK(fs::exists(dir.path / f));
  }
  CHECK(csv_rows(dir.path / "loss_curves.csv") == 1 + 2 * (4 + 8));
  CHECK(csv_rows(dir.path / "mse_per_coordinate.csv") == 1 + 2 * rep.runs[0].mse.values.size());
  CHECK(csv_rows(dir.path / "sigma.csv") == 3);
  CHECK(csv_rows(dir.path / "tests.csv") == 3);
  CHECK(csv_rows(dir.path / "mse_kde.csv") == 1 + 2 * 512);
  const auto tests = read_text_file(dir.path / "tests.csv");
  CHECK(tests.find("0.05,0.8,3,welch,") != std::string::npos);
  const auto png = load_png(dir.path / "sigma.png");
  CHECK(png.cols == 640);

  TempDir again("tactile_cal_report_ablation2");
  write_ablation_report(rep, p, again.path);
  for (const auto& e : fs::directory_iterator(dir.path)) {
    INFO(e.path().filename());
    CHECK(read_file_bytes(e.path()) == read_file_bytes(again.path / e.path().filename()));
  }
}

TEST_CASE("object artifacts: error table and violins", "[report][io]") {
  TempDir dir("tactile_cal_report_objects");
  DepthMap gt{Array2D<double>(20, 20), 0.1, Units::mm};
  for (std::size_t r = 5; r < 15; ++r) {
    for (std::size_t c = 5; c < 15; ++c) gt.values(r, c) = 0.5;
  }
  auto pred = gt;
  for (auto& v : pred.values.values()) v += 0.01;
  NamedEvaluation ne{"block", eval::evaluate_object(pred, gt), pred};
  const auto s = write_object_report({ne}, dir.path);
  CHECK(s.find("block: overall") != std::string::npos);
  const auto t = read_text_file(dir.path / "errors.csv");
  const auto lines = text::lines(t);
  REQUIRE(lines.size() == 2);
  const auto f = text::split(lines[1], ',');
  REQUIRE(f.size() == 12);
  CHECK(f[0] == "block");
  double overall = 0;
  REQUIRE(text::parse_double(f[1], overall));
  CHECK(overall == Catch::Approx(ne.eval.report.overall_um));
  for (const char* name : {"block_pred.png", "block_gt.png", "block_error.png", "block_pred.grid", "error_violins.png"}) {
    CHECK(fs::exists(dir.path / name));
  }
  CHECK(load_grid(dir.path / "block_pred.grid") == to_grid(pred));
}
