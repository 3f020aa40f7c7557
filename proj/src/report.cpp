#include "cecl/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cecl/errors.hpp"
#include "cecl/harness.hpp"

namespace cecl {

MissingArtifactsError::MissingArtifactsError(std::vector<std::string> missing)
    : Error([&] {
        std::string msg = "missing run artifacts:";
        for (const auto& m : missing) msg += " " + m;
        return msg;
      }()),
      missing_(std::move(missing)) {}

namespace {

constexpr double kWidth = 640, kHeight = 420, kMargin = 50;

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

const char* palette(int k) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[((k % 10) + 10) % 10];
}

struct Axes {
  double x0, x1, y0, y1;
  double px(double x) const { return kMargin + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (kWidth - 2 * kMargin); }
  double py(double y) const {
    return kHeight - kMargin - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (kHeight - 2 * kMargin);
  }
};

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::vector<int> group;  // colour per point; empty means series colour
};

Axes fit_axes(const std::vector<Series>& series) {
  Axes a{1e300, -1e300, 1e300, -1e300};
  for (const Series& s : series) {
    for (double v : s.x) a.x0 = std::min(a.x0, v), a.x1 = std::max(a.x1, v);
    for (double v : s.y) a.y0 = std::min(a.y0, v), a.y1 = std::max(a.y1, v);
  }
  if (a.x0 > a.x1) a = {0, 1, 0, 1};
  return a;
}

void svg_header(std::ostream& out, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                const Axes& a) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << xlabel << "</text>\n"
      << "<text x=\"14\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
      << kHeight / 2 << ")\">" << ylabel << "</text>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
      << kHeight - kMargin << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kHeight - kMargin
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << kMargin << "\" y=\"" << kHeight - kMargin + 14 << "\" font-size=\"10\">" << fmt(a.x0)
      << "</text>\n"
      << "<text x=\"" << kWidth - kMargin << "\" y=\"" << kHeight - kMargin + 14
      << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(a.x1) << "</text>\n"
      << "<text x=\"" << kMargin - 4 << "\" y=\"" << kHeight - kMargin << "\" font-size=\"10\" text-anchor=\"end\">"
      << fmt(a.y0) << "</text>\n"
      << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(a.y1)
      << "</text>\n";
}

void write_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                const std::string& ylabel, const std::vector<Series>& series, bool lines) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  const Axes a = fit_axes(series);
  svg_header(out, title, xlabel, ylabel, a);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const Series& ser = series[s];
    const char* colour = palette(static_cast<int>(s));
    out << "<g class=\"series\" data-name=\"" << ser.name << "\">\n";
    if (lines && ser.x.size() > 1) {
      out << "<polyline fill=\"none\" stroke=\"" << colour << "\" points=\"";
      for (std::size_t i = 0; i < ser.x.size(); ++i) out << a.px(ser.x[i]) << ',' << a.py(ser.y[i]) << ' ';
      out << "\"/>\n";
    }
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      const char* fill = ser.group.empty() ? colour : palette(ser.group[i]);
      out << "<circle class=\"point\" cx=\"" << a.px(ser.x[i]) << "\" cy=\"" << a.py(ser.y[i]) << "\" r=\""
          << (lines ? 3 : 2) << "\" fill=\"" << fill << "\" data-x=\"" << fmt(ser.x[i]) << "\" data-y=\""
          << fmt(ser.y[i]) << "\"";
      if (!ser.group.empty()) out << " data-group=\"" << ser.group[i] << "\"";
      out << "/>\n";
    }
    out << "</g>\n";
    out << "<text x=\"" << kWidth - kMargin << "\" y=\"" << kMargin + 14 * static_cast<double>(s)
        << "\" font-size=\"11\" text-anchor=\"end\" fill=\"" << colour << "\">" << ser.name << "</text>\n";
  }
  out << "</svg>\n";
}

double number(const std::string& cell) {
  double v = 0.0;
  std::from_chars(cell.data(), cell.data() + cell.size(), v);
  return v;
}

}  // namespace

std::vector<std::string> required_run_artifacts() {
  return {"epochs.jsonl", "summary.json", "transition.csv", "embeddings.csv"};
}

Matrix pca_2d(const Matrix& x) {
  if (x.rows() == 0) return Matrix(0, 2);
  const RowVector mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / std::max<Eigen::Index>(1, x.rows() - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  Eigen::MatrixXd axes(x.cols(), 2);
  for (int a = 0; a < 2; ++a) {
    const Eigen::Index col = x.cols() - 1 - a;
    Eigen::VectorXd v = col >= 0 ? Eigen::VectorXd(solver.eigenvectors().col(col)) : Eigen::VectorXd::Zero(x.cols());
    Eigen::Index big = 0;
    if (v.size() > 0) v.cwiseAbs().maxCoeff(&big);
    if (v.size() > 0 && v(big) < 0) v = -v;
    axes.col(a) = v;
  }
  return centered * axes;
}

std::vector<std::filesystem::path> emit_reports(const std::filesystem::path& run_dir) {
  std::vector<std::string> missing;
  for (const std::string& name : required_run_artifacts()) {
    if (!std::filesystem::exists(run_dir / name)) missing.push_back(name);
  }
  if (!missing.empty()) throw MissingArtifactsError(missing);

  const std::filesystem::path dir = run_dir / "report";
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;

  // Accuracy and open-set bookkeeping per epoch.
  std::vector<EpochStats> epochs;
  {
    std::ifstream in(run_dir / "epochs.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) epochs.push_back(parse_epoch_record(line));
    }
  }
  Series acc{"test_accuracy", {}, {}, {}};
  Series clean{"clean", {}, {}, {}}, incorporated{"incorporated", {}, {}, {}}, delimiters{"delimiters", {}, {}, {}};
  {
    std::ofstream csv(dir / "accuracy_curve.csv");
    csv << "epoch,test_accuracy\n";
    std::ofstream counts(dir / "osd_counts.csv");
    counts << "epoch,clean,incorporated,delimiters\n";
    for (const EpochStats& e : epochs) {
      acc.x.push_back(e.epoch);
      acc.y.push_back(e.test_accuracy);
      csv << e.epoch << ',' << fmt(e.test_accuracy) << '\n';
      clean.x.push_back(e.epoch);
      clean.y.push_back(e.clean_count);
      incorporated.x.push_back(e.epoch);
      incorporated.y.push_back(e.incorporated);
      delimiters.x.push_back(e.epoch);
      delimiters.y.push_back(e.delimiters);
      counts << e.epoch << ',' << e.clean_count << ',' << e.incorporated << ',' << e.delimiters << '\n';
    }
  }
  write_plot(dir / "accuracy_curve.svg", "Test accuracy", "epoch", "accuracy", {acc}, true);
  write_plot(dir / "osd_counts.svg", "Open-set decisions", "epoch", "examples", {clean, incorporated, delimiters},
             true);
  written.insert(written.end(), {dir / "accuracy_curve.svg", dir / "accuracy_curve.csv", dir / "osd_counts.svg",
                                 dir / "osd_counts.csv"});

  // Transition heatmap: one rect per (source class, known column).
  {
    const auto rows = read_csv(run_dir / "transition.csv");
    std::ofstream csv(dir / "transition_heatmap.csv");
    csv << "source_class,column,fraction\n";
    std::ofstream svg(dir / "transition_heatmap.svg");
    const std::size_t columns = rows.empty() ? 0 : rows[0].size() - 4;
    const std::size_t body = rows.empty() ? 0 : rows.size() - 1;
    const double cell_w = columns ? (kWidth - 2 * kMargin) / static_cast<double>(columns) : 0.0;
    const double cell_h = body ? (kHeight - 2 * kMargin) / static_cast<double>(body) : 0.0;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << "Open-set examples by predicted known class</text>\n";
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const std::string& source = rows[r][0];
      svg << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + (static_cast<double>(r) - 0.5) * cell_h
          << "\" font-size=\"10\" text-anchor=\"end\">" << source << "</text>\n";
      for (std::size_t k = 0; k < columns; ++k) {
        const std::string& cell = rows[r][4 + k];
        const double v = number(cell);
        const int shade = static_cast<int>(255.0 * (1.0 - std::clamp(v, 0.0, 1.0)));
        csv << source << ',' << k << ',' << cell << '\n';
        svg << "<rect class=\"cell\" x=\"" << kMargin + static_cast<double>(k) * cell_w << "\" y=\""
            << kMargin + static_cast<double>(r - 1) * cell_h << "\" width=\"" << cell_w << "\" height=\"" << cell_h
            << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" data-x=\"" << k << "\" data-y=\"" << source
            << "\" data-value=\"" << cell << "\"/>\n";
      }
    }
    for (std::size_t k = 0; k < columns; ++k) {
      svg << "<text x=\"" << kMargin + (static_cast<double>(k) + 0.5) * cell_w << "\" y=\"" << kHeight - kMargin + 14
          << "\" font-size=\"10\" text-anchor=\"middle\">" << k << "</text>\n";
    }
    svg << "</svg>\n";
  }
  written.insert(written.end(), {dir / "transition_heatmap.svg", dir / "transition_heatmap.csv"});

  // PCA of the test embeddings coloured by class.
  {
    const auto rows = read_csv(run_dir / "embeddings.csv");
    const std::size_t n = rows.empty() ? 0 : rows.size() - 1;
    const std::size_t d = rows.empty() ? 0 : rows[0].size() - 1;
    Matrix e(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
      labels.push_back(static_cast<int>(number(rows[i + 1][0])));
      for (std::size_t j = 0; j < d; ++j) {
        e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = number(rows[i + 1][j + 1]);
      }
    }
    const Matrix p = pca_2d(e);
    Series points{"test embeddings", {}, {}, labels};
    std::ofstream csv(dir / "embedding_pca.csv");
    csv << "label,pc1,pc2\n";
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      points.x.push_back(p(i, 0));
      points.y.push_back(p(i, 1));
      csv << labels[static_cast<std::size_t>(i)] << ',' << fmt(p(i, 0)) << ',' << fmt(p(i, 1)) << '\n';
    }
    write_plot(dir / "embedding_pca.svg", "Test embeddings (PCA)", "pc1", "pc2", {points}, false);
  }
  written.insert(written.end(), {dir / "embedding_pca.svg", dir / "embedding_pca.csv"});

  if (std::filesystem::exists(run_dir / "tau_sweep.csv")) {
    const auto rows = read_csv(run_dir / "tau_sweep.csv");
    Series s{"accuracy_mean", {}, {}, {}};
    std::ofstream csv(dir / "tau_sensitivity.csv");
    csv << "tau,accuracy_mean\n";
    for (std::size_t r = 1; r < rows.size(); ++r) {
      s.x.push_back(number(rows[r][0]));
      s.y.push_back(number(rows[r][1]));
      csv << fmt(s.x.back()) << ',' << fmt(s.y.back()) << '\n';
    }
    write_plot(dir / "tau_sensitivity.svg", "Sensitivity to tau", "tau", "accuracy", {s}, true);
    written.insert(written.end(), {dir / "tau_sensitivity.svg", dir / "tau_sensitivity.csv"});
  }
  return written;
}

}  // namespace cecl
