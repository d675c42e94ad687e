#include "stkd/datahub.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace stkd {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_cell(std::string_view cell, int line_no, int col) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
    std::ostringstream msg;
    msg << "non-numeric cell '" << cell << "' at line " << line_no << ", column " << col + 1;
    throw DataFormatError(msg.str());
  }
  return v;
}

RowMatrix parse_numeric_table(std::istream& in, char delimiter, bool header) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  bool header_pending = header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    std::vector<double> row;
    std::string_view rest(line);
    int col = 0;
    while (true) {
      const auto pos = rest.find(delimiter);
      row.push_back(parse_cell(rest.substr(0, pos), line_no, col++));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + 1);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      std::ostringstream msg;
      msg << "ragged row at line " << line_no << ": expected " << rows.front().size() << " columns, got "
          << row.size();
      throw DataFormatError(msg.str());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw EmptyInputError("no data rows in input");
  RowMatrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

SpeedMatrix parse_speed_csv(std::istream& in, char delimiter, bool header) {
  SpeedMatrix out;
  out.values = parse_numeric_table(in, delimiter, header);
  return out;
}

SpeedMatrix load_speed_csv(const std::filesystem::path& path, char delimiter, bool header) {
  auto in = open_input(path);
  return parse_speed_csv(in, delimiter, header);
}

RowMatrix load_distance_csv(const std::filesystem::path& path, char delimiter, bool header) {
  auto in = open_input(path);
  RowMatrix d = parse_numeric_table(in, delimiter, header);
  if (d.rows() != d.cols()) throw DataFormatError("distance matrix is not square: " + path.string());
  return d;
}

void write_matrix_csv(const std::filesystem::path& path, const RowMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
}

SpeedMatrix clean_speeds(const SpeedMatrix& speeds) {
  SpeedMatrix out = speeds;
  const int rows = speeds.timesteps();
  for (int s = 0; s < speeds.stations(); ++s) {
    auto missing = [&](int r) {
      const double v = out.values(r, s);
      return std::isnan(v) || v == 0.0;
    };
    int prev = -1;
    for (int r = 0; r <= rows; ++r) {
      if (r < rows && missing(r)) continue;
      // r is the next valid row (or rows), prev the last valid one
      if (r - prev > 1) {
        if (prev < 0 && r == rows) {
          throw ValidationError("station " + std::to_string(s) + " has no valid readings");
        }
        for (int k = prev + 1; k < r; ++k) {
          if (prev < 0) {
            out.values(k, s) = out.values(r, s);
          } else if (r == rows) {
            out.values(k, s) = out.values(prev, s);
          } else {
            const double t = static_cast<double>(k - prev) / (r - prev);
            out.values(k, s) = (1.0 - t) * out.values(prev, s) + t * out.values(r, s);
          }
        }
      }
      prev = r;
    }
  }
  return out;
}

double default_sigma_sq(const RowMatrix& distances) {
  std::vector<double> vals;
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    for (Eigen::Index j = 0; j < distances.cols(); ++j) {
      if (i != j && distances(i, j) > 0.0) vals.push_back(distances(i, j));
    }
  }
  if (vals.size() < 2) return 1.0;
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(vals.size());
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  var /= static_cast<double>(vals.size());
  return var > 0.0 ? var : 1.0;
}

WeightedAdjacency build_adjacency(const RowMatrix& distances, double sigma_sq, double epsilon) {
  const Eigen::Index n = distances.rows();
  if (n == 0 || distances.cols() != n) throw ValidationError("distance matrix must be square and non-empty");
  if (!(sigma_sq > 0.0)) throw ValidationError("sigma_sq must be positive");
  if (epsilon < 0.0 || epsilon >= 1.0) throw ValidationError("epsilon must lie in [0, 1)");
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = distances(i, j);
      if (!std::isfinite(d) || d < 0.0) throw ValidationError("distances must be finite and nonnegative");
      if (d != distances(j, i)) {
        std::ostringstream msg;
        msg << "distance matrix is not symmetric at (" << i << ',' << j << ')';
        throw ValidationError(msg.str());
      }
    }
  }
  WeightedAdjacency adj;
  adj.sigma_sq = sigma_sq;
  adj.epsilon = epsilon;
  adj.weights = RowMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = distances(i, j);
      const double w = std::exp(-d * d / sigma_sq);
      if (w >= epsilon) adj.weights(i, j) = w;
    }
  }
  return adj;
}

int window_count(int rows, int history, int horizon) {
  return std::max(0, rows - history - horizon + 1);
}

ZScore fit_zscore(const RowMatrix& values) {
  ZScore z;
  const double count = static_cast<double>(values.size());
  if (count == 0) return z;
  z.mean = values.mean();
  const double var = (values.array() - z.mean).square().sum() / count;
  z.std = std::max(std::sqrt(var), kStdFloor);
  return z;
}

namespace {

WindowedDataset windows_at(const SpeedMatrix& speeds, int history, int horizon, ZScore stats,
                           const std::vector<int>& starts) {
  const int n = speeds.stations();
  const int count = static_cast<int>(starts.size());
  WindowedDataset ds;
  ds.stats = stats;
  ds.start_rows = starts;
  ds.inputs = Tensor(count, history, n, 1);
  ds.targets = Tensor(count, horizon, n, 1);
  for (int k = 0; k < count; ++k) {
    const int s = starts[k];
    for (int t = 0; t < history; ++t) {
      for (int i = 0; i < n; ++i) ds.inputs(k, t, i, 0) = stats.normalize(speeds.values(s + t, i));
    }
    for (int t = 0; t < horizon; ++t) {
      for (int i = 0; i < n; ++i) ds.targets(k, t, i, 0) = speeds.values(s + history + t, i);
    }
  }
  return ds;
}

}  // namespace

WindowedDataset make_windows(const SpeedMatrix& speeds, int history, int horizon, ZScore stats) {
  if (history <= 0 || horizon <= 0) throw ValidationError("history and horizon must be positive");
  const int count = window_count(speeds.timesteps(), history, horizon);
  if (count == 0) {
    throw InsufficientDataError("need at least " + std::to_string(history + horizon) + " rows, got " +
                                std::to_string(speeds.timesteps()));
  }
  std::vector<int> starts(count);
  for (int s = 0; s < count; ++s) starts[s] = s;
  return windows_at(speeds, history, horizon, stats, starts);
}

DatasetSplits window(const SpeedMatrix& speeds, int history, int horizon, SplitRatios ratios) {
  if (history <= 0 || horizon <= 0) throw ValidationError("history and horizon must be positive");
  if (ratios.train <= 0.0 || ratios.val < 0.0 || ratios.test < 0.0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ValidationError("split ratios must be nonnegative, train positive, and sum to 1");
  }
  if (speeds.stations() <= 0) throw ValidationError("speed matrix has no stations");
  if (speeds.values.array().isNaN().any()) throw ValidationError("speed matrix contains NaN; clean it first");

  const int rows = speeds.timesteps();
  const int required = static_cast<int>(std::ceil(std::max(
      {(history + horizon) / ratios.train, ratios.val > 0 ? horizon / ratios.val : 0.0,
       ratios.test > 0 ? horizon / ratios.test : 0.0})));
  auto insufficient = [&] {
    return InsufficientDataError("insufficient rows for M=" + std::to_string(history) + ", h=" +
                                 std::to_string(horizon) + ": need at least " + std::to_string(history + horizon) +
                                 " rows for one window and " + std::to_string(required) +
                                 " to populate every split, got " + std::to_string(rows));
  };
  if (window_count(rows, history, horizon) == 0) throw insufficient();

  const int b1 = static_cast<int>(std::lround(ratios.train * rows));
  const int b2 = static_cast<int>(std::lround((ratios.train + ratios.val) * rows));

  std::vector<int> train, val, test;
  DatasetSplits out;
  for (int s = 0; s < window_count(rows, history, horizon); ++s) {
    const int first = s + history;
    const int last = s + history + horizon - 1;
    if (last < b1) {
      train.push_back(s);
    } else if (first >= b1 && last < b2) {
      val.push_back(s);
    } else if (first >= b2) {
      test.push_back(s);
    } else {
      out.purged_starts.push_back(s);
    }
  }
  if (train.empty() || (ratios.val > 0 && val.empty()) || (ratios.test > 0 && test.empty())) throw insufficient();

  const ZScore stats = fit_zscore(speeds.values.topRows(b1));
  out.train = windows_at(speeds, history, horizon, stats, train);
  out.val = windows_at(speeds, history, horizon, stats, val);
  out.test = windows_at(speeds, history, horizon, stats, test);
  return out;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_nodes <= 0 || spec.n_timesteps <= 0) throw ValidationError("synthetic spec needs nodes and timesteps");
  if (spec.noise_std < 0.0) throw ValidationError("noise_std must be nonnegative");
  if (spec.coupling < 0.0 || spec.coupling > 1.0) throw ValidationError("coupling must lie in [0, 1]");
  for (const auto& w : spec.waves) {
    if (!(w.period > 0.0)) throw ValidationError("wave period must be positive");
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> coord(0.0, spec.area_km);
  const int n = spec.n_nodes;
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = coord(rng);
    y[i] = coord(rng);
  }

  SyntheticData out;
  out.distances = RowMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) out.distances(i, j) = std::hypot(x[i] - x[j], y[i] - y[j]);
  }
  out.adjacency = build_adjacency(out.distances, default_sigma_sq(out.distances), spec.epsilon);

  // phases follow position so that neighbouring stations move together
  out.phases.resize(n);
  for (int i = 0; i < n; ++i) out.phases[i] = 2.0 * std::numbers::pi * (x[i] + 0.5 * y[i]) / spec.area_km;

  const int rows = spec.n_timesteps;
  RowMatrix own(rows, n);
  for (int t = 0; t < rows; ++t) {
    for (int i = 0; i < n; ++i) {
      double v = spec.base_speed;
      for (const auto& w : spec.waves) {
        v += w.amplitude * std::sin(2.0 * std::numbers::pi * t / w.period + out.phases[i]);
      }
      own(t, i) = v;
    }
  }

  RowMatrix mixed = own;
  if (spec.coupling > 0.0) {
    const RowMatrix& W = out.adjacency.weights;
    for (int i = 0; i < n; ++i) {
      const double deg = W.row(i).sum();
      if (deg <= 0.0) continue;
      const Eigen::VectorXd neighbour = own * W.row(i).transpose() / deg;
      mixed.col(i) = (1.0 - spec.coupling) * own.col(i) + spec.coupling * neighbour;
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  out.speeds.interval_minutes = spec.interval_minutes;
  out.speeds.values = mixed;
  if (spec.noise_std > 0.0) {
    for (int t = 0; t < rows; ++t) {
      for (int i = 0; i < n; ++i) out.speeds.values(t, i) += spec.noise_std * noise(rng);
    }
  }
  return out;
}

}  // namespace stkd
