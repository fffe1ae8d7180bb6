#pragma once

// Claim triangles: storage, run-off masks, CSV/JSON ingestion and the
// elementary arithmetic (cumulation, differencing, loss ratios, chain ladder).
// Indices are 1-based throughout: accident period i = 1..I, development j = 1..J.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"

namespace shockres {

enum class CellState { observed, future, missing };

struct Cell {
  int i = 1;
  int j = 1;
  bool operator==(const Cell&) const = default;
};

enum class Layout { long_form, wide };
enum class ValueKind { incremental, cumulative };

class LossTriangle {
 public:
  LossTriangle() = default;

  /// Zero-filled triangle with the standard run-off mask (observed iff i + j - 1 <= I).
  LossTriangle(std::string line_id, int accident_periods, int development_periods)
      : line_id_(std::move(line_id)), rows_(accident_periods), cols_(development_periods) {
    if (rows_ < 1 || cols_ < 1) throw DataError("triangle dimensions must be positive");
    values_ = Eigen::MatrixXd::Zero(rows_, cols_);
    states_.assign(static_cast<std::size_t>(rows_ * cols_), CellState::future);
    for (int i = 1; i <= rows_; ++i)
      for (int j = 1; j <= cols_; ++j)
        if (i + j - 1 <= rows_) set_state(i, j, CellState::observed);
  }

  const std::string& line_id() const { return line_id_; }
  void set_line_id(std::string id) { line_id_ = std::move(id); }
  int accident_periods() const { return rows_; }
  int development_periods() const { return cols_; }

  double operator()(int i, int j) const {
    check(i, j);
    return values_(i - 1, j - 1);
  }
  double& operator()(int i, int j) {
    check(i, j);
    return values_(i - 1, j - 1);
  }
  /// Raw I x J storage (0-based); unobserved cells hold whatever was set (0 by default).
  const Eigen::MatrixXd& values() const { return values_; }

  CellState state(int i, int j) const {
    check(i, j);
    return states_[index(i, j)];
  }
  void set_state(int i, int j, CellState s) {
    check(i, j);
    states_[index(i, j)] = s;
  }
  bool is_observed(int i, int j) const { return state(i, j) == CellState::observed; }

  const std::optional<Eigen::VectorXd>& exposure() const { return exposure_; }
  void set_exposure(const Eigen::VectorXd& e) {
    if (e.size() != rows_) throw DataError("exposure length must equal the number of accident periods");
    for (Eigen::Index k = 0; k < e.size(); ++k)
      if (!(e(k) > 0.0) || !std::isfinite(e(k))) throw DataError("exposure values must be strictly positive");
    exposure_ = e;
  }
  void clear_exposure() { exposure_.reset(); }

  std::vector<Cell> cells_in(CellState s) const {
    std::vector<Cell> out;
    for (int i = 1; i <= rows_; ++i)
      for (int j = 1; j <= cols_; ++j)
        if (state(i, j) == s) out.push_back({i, j});
    return out;
  }
  std::vector<Cell> observed_cells() const { return cells_in(CellState::observed); }
  std::vector<Cell> future_cells() const { return cells_in(CellState::future); }
  std::size_t observed_count() const { return static_cast<std::size_t>(std::count(states_.begin(), states_.end(), CellState::observed)); }

  bool same_shape(const LossTriangle& o) const { return rows_ == o.rows_ && cols_ == o.cols_ && states_ == o.states_; }

  double min_observed() const {
    double m = std::numeric_limits<double>::infinity();
    for (const Cell& c : observed_cells()) m = std::min(m, (*this)(c.i, c.j));
    return m;
  }

  /// Triangle with the same mask and zero values.
  LossTriangle like() const {
    LossTriangle t = *this;
    t.values_.setZero();
    return t;
  }

 private:
  void check(int i, int j) const {
    if (i < 1 || i > rows_ || j < 1 || j > cols_)
      throw DataError("cell (" + std::to_string(i) + "," + std::to_string(j) + ") outside " + std::to_string(rows_) + "x" +
                      std::to_string(cols_) + " triangle");
  }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>((i - 1) * cols_ + (j - 1)); }

  std::string line_id_;
  int rows_ = 0, cols_ = 0;
  Eigen::MatrixXd values_;
  std::vector<CellState> states_;
  std::optional<Eigen::VectorXd> exposure_;
};

/// Ordered lines sharing dimensions and observation mask.
class TrianglePortfolio {
 public:
  TrianglePortfolio() = default;
  explicit TrianglePortfolio(std::vector<LossTriangle> lines) : lines_(std::move(lines)) {
    if (lines_.empty()) throw DataError("portfolio needs at least one triangle");
    for (const auto& t : lines_)
      if (!t.same_shape(lines_.front())) throw DataError("portfolio triangles must share dimensions and observation mask");
  }
  std::size_t size() const { return lines_.size(); }
  int accident_periods() const { return lines_.front().accident_periods(); }
  int development_periods() const { return lines_.front().development_periods(); }
  const LossTriangle& operator[](std::size_t n) const { return lines_.at(n); }
  LossTriangle& operator[](std::size_t n) { return lines_.at(n); }
  const std::vector<LossTriangle>& lines() const { return lines_; }
  auto begin() const { return lines_.begin(); }
  auto end() const { return lines_.end(); }

  void require_modelling_shape() const {
    if (accident_periods() < 2 || development_periods() < 2) throw DataError("modelling requires I >= 2 and J >= 2");
  }
  void require_dependence() const {
    if (size() < 2) throw DataError("dependence analysis requires at least two lines");
  }

 private:
  std::vector<LossTriangle> lines_;
};

// ---------------------------------------------------------------------------
// Arithmetic

/// Row-wise prefix sums over development (observed cells only are accumulated;
/// a row's running sum continues through observed cells in column order).
inline LossTriangle to_cumulative(const LossTriangle& t) {
  LossTriangle out = t;
  for (int i = 1; i <= t.accident_periods(); ++i) {
    double acc = 0.0;
    for (int j = 1; j <= t.development_periods(); ++j) {
      if (!t.is_observed(i, j)) continue;
      acc += t(i, j);
      out(i, j) = acc;
    }
  }
  return out;
}

/// Inverse of to_cumulative: differences along development.
inline LossTriangle difference(const LossTriangle& t) {
  LossTriangle out = t;
  for (int i = 1; i <= t.accident_periods(); ++i) {
    double prev = 0.0;
    for (int j = 1; j <= t.development_periods(); ++j) {
      if (!t.is_observed(i, j)) continue;
      out(i, j) = t(i, j) - prev;
      prev = t(i, j);
    }
  }
  return out;
}

/// Incremental / exposure_i on observed cells; NaN marks absent cells.
inline Eigen::MatrixXd loss_ratios(const LossTriangle& t) {
  if (!t.exposure()) throw DataError("loss_ratios: triangle '" + t.line_id() + "' has no exposure");
  const Eigen::VectorXd& e = *t.exposure();
  Eigen::MatrixXd r = Eigen::MatrixXd::Constant(t.accident_periods(), t.development_periods(), std::numeric_limits<double>::quiet_NaN());
  for (const Cell& c : t.observed_cells()) r(c.i - 1, c.j - 1) = t(c.i, c.j) / e(c.i - 1);
  return r;
}

/// Exposure-standardized copy: every cell divided by its row exposure, exposure removed.
inline LossTriangle standardize(const LossTriangle& t) {
  if (!t.exposure()) throw DataError("standardize: triangle '" + t.line_id() + "' has no exposure");
  LossTriangle out = t;
  const Eigen::VectorXd& e = *t.exposure();
  for (int i = 1; i <= t.accident_periods(); ++i)
    for (int j = 1; j <= t.development_periods(); ++j) out(i, j) = t(i, j) / e(i - 1);
  out.clear_exposure();
  return out;
}

inline TrianglePortfolio standardize(const TrianglePortfolio& p) {
  std::vector<LossTriangle> lines;
  for (const auto& t : p) lines.push_back(standardize(t));
  return TrianglePortfolio(std::move(lines));
}

/// Volume-weighted development factors of an incremental triangle:
/// f_j = sum_i C(i, j+1) / sum_i C(i, j) over rows observed at j + 1.
inline std::vector<double> age_to_age_factors(const LossTriangle& t) {
  const LossTriangle c = to_cumulative(t);
  std::vector<double> f;
  for (int j = 1; j < t.development_periods(); ++j) {
    double num = 0.0, den = 0.0;
    int rows = 0;
    for (int i = 1; i <= t.accident_periods(); ++i) {
      if (!t.is_observed(i, j) || !t.is_observed(i, j + 1)) continue;
      num += c(i, j + 1);
      den += c(i, j);
      ++rows;
    }
    if (rows == 0 || den == 0.0)
      throw NumericError("age_to_age_factors: zero denominator at development period " + std::to_string(j));
    f.push_back(num / den);
  }
  return f;
}

struct ChainLadder {
  std::vector<double> factors;
  Eigen::MatrixXd forecast;  // incremental forecasts on future cells, 0 elsewhere
  Eigen::VectorXd row_reserves;
  double reserve = 0.0;
};

/// Deterministic chain-ladder completion of the lower triangle.
inline ChainLadder chain_ladder_forecast(const LossTriangle& t) {
  ChainLadder out;
  out.factors = age_to_age_factors(t);
  const LossTriangle c = to_cumulative(t);
  const int I = t.accident_periods(), J = t.development_periods();
  out.forecast = Eigen::MatrixXd::Zero(I, J);
  out.row_reserves = Eigen::VectorXd::Zero(I);
  for (int i = 1; i <= I; ++i) {
    int last = 0;
    for (int j = 1; j <= J; ++j)
      if (t.is_observed(i, j)) last = j;
    if (last == 0) throw DataError("chain_ladder_forecast: accident period " + std::to_string(i) + " has no observations");
    double cum = c(i, last);
    for (int j = last + 1; j <= J; ++j) {
      const double next = cum * out.factors[static_cast<std::size_t>(j - 2)];
      if (t.state(i, j) == CellState::future) {
        out.forecast(i - 1, j - 1) = next - cum;
        out.row_reserves(i - 1) += next - cum;
      }
      cum = next;
    }
  }
  out.reserve = out.row_reserves.sum();
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".json");
  return p;
}

namespace detail {

inline void check_interior(const LossTriangle& t, const std::string& where) {
  // A cell inside the standard run-off region that is absent from the file is
  // a hole in the upper triangle; those are rejected rather than imputed.
  for (int i = 1; i <= t.accident_periods(); ++i)
    for (int j = 1; j <= t.development_periods(); ++j)
      if (i + j - 1 <= t.accident_periods() && t.state(i, j) == CellState::future)
        throw DataError(where + ": missing interior cell (" + std::to_string(i) + "," + std::to_string(j) + ")");
}

inline void apply_sidecar(LossTriangle& t, const std::filesystem::path& csv) {
  const auto side = sidecar_path(csv);
  if (!std::filesystem::exists(side)) return;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(side));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(side.string() + ": " + e.what());
  }
  const nlohmann::json* entry = &j;
  if (j.contains("lines") && j["lines"].contains(t.line_id())) entry = &j["lines"][t.line_id()];
  if (entry->contains("exposure")) {
    const auto v = (*entry)["exposure"].get<std::vector<double>>();
    t.set_exposure(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  if (entry->contains("mask")) {
    // rows of codes: 1 observed, 0 future, -1 missing
    const auto m = (*entry)["mask"].get<std::vector<std::vector<int>>>();
    if (static_cast<int>(m.size()) != t.accident_periods()) throw DataError(side.string() + ": mask row count mismatch");
    for (int i = 1; i <= t.accident_periods(); ++i) {
      if (static_cast<int>(m[static_cast<std::size_t>(i - 1)].size()) != t.development_periods())
        throw DataError(side.string() + ": mask column count mismatch");
      for (int j = 1; j <= t.development_periods(); ++j) {
        const int code = m[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
        t.set_state(i, j, code > 0 ? CellState::observed : code == 0 ? CellState::future : CellState::missing);
      }
    }
  }
}

struct LongRecord {
  int i, j;
  double v;
};

inline std::map<std::string, std::vector<LongRecord>> read_long(const std::filesystem::path& path) {
  const io::CsvTable csv = io::read_csv(path);
  const int cl = csv.column("line"), ca = csv.column("accident"), cd = csv.column("development"), cv = csv.column("value");
  if (ca < 0 || cd < 0 || cv < 0) throw DataError(path.string() + ": long layout needs columns accident, development, value");
  std::map<std::string, std::vector<LongRecord>> by_line;
  std::vector<std::string> order;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::string where = path.string() + ":" + std::to_string(csv.line_numbers[r]);
    const std::string line = cl >= 0 ? row[static_cast<std::size_t>(cl)] : std::string("1");
    by_line[line].push_back({io::parse_int(row[static_cast<std::size_t>(ca)], where),
                             io::parse_int(row[static_cast<std::size_t>(cd)], where),
                             io::parse_double(row[static_cast<std::size_t>(cv)], where)});
  }
  return by_line;
}

inline LossTriangle build(const std::string& line, const std::vector<LongRecord>& recs, int I, int J,
                          const std::string& where) {
  if (I <= 0)
    for (const auto& r : recs) I = std::max(I, r.i);
  if (J <= 0)
    for (const auto& r : recs) J = std::max(J, r.j);
  LossTriangle t(line, I, J);
  for (int i = 1; i <= I; ++i)
    for (int j = 1; j <= J; ++j) t.set_state(i, j, CellState::future);
  for (const auto& r : recs) {
    if (r.i < 1 || r.i > I || r.j < 1 || r.j > J)
      throw DataError(where + ": index out of range (" + std::to_string(r.i) + "," + std::to_string(r.j) + ")");
    if (t.is_observed(r.i, r.j))
      throw DataError(where + ": duplicate cell (" + std::to_string(r.i) + "," + std::to_string(r.j) + ") in line '" + line + "'");
    t.set_state(r.i, r.j, CellState::observed);
    t(r.i, r.j) = r.v;
  }
  return t;
}

}  // namespace detail

struct LoadOptions {
  Layout layout = Layout::long_form;
  ValueKind kind = ValueKind::incremental;
  std::string line;          // long layout: which line to take (empty = the only one)
  int accident_periods = 0;  // 0 = infer from the data
  int development_periods = 0;
};

/// Reads one triangle. Long layout: columns line, accident, development, value.
/// Wide layout: one row per accident period, an optional `accident` column, an
/// optional `premium`/`exposure` column, then one column per development
/// period; blank entries are unobserved. A JSON sidecar next to the CSV
/// (same stem, .json) may supply exposure and an explicit mask.
inline LossTriangle load_triangle(const std::filesystem::path& path, const LoadOptions& opt = {}) {
  LossTriangle t;
  const std::string where = path.string();
  if (opt.layout == Layout::long_form) {
    const auto by_line = detail::read_long(path);
    if (by_line.empty()) throw DataError(where + ": no data rows");
    std::string line = opt.line;
    if (line.empty()) {
      if (by_line.size() != 1) throw DataError(where + ": several lines present; choose one");
      line = by_line.begin()->first;
    }
    const auto it = by_line.find(line);
    if (it == by_line.end()) throw DataError(where + ": line '" + line + "' not found");
    t = detail::build(line, it->second, opt.accident_periods, opt.development_periods, where);
  } else {
    const io::CsvTable csv = io::read_csv(path);
    int ca = -1, ce = -1;
    std::vector<int> dev_cols;
    for (std::size_t k = 0; k < csv.header.size(); ++k) {
      std::string h = csv.header[k];
      std::transform(h.begin(), h.end(), h.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      if (h == "accident" || h == "accident_period" || h == "ay")
        ca = static_cast<int>(k);
      else if (h == "premium" || h == "exposure")
        ce = static_cast<int>(k);
      else
        dev_cols.push_back(static_cast<int>(k));
    }
    std::vector<detail::LongRecord> recs;
    std::vector<double> exposure;
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
      const auto& row = csv.rows[r];
      const std::string w = where + ":" + std::to_string(csv.line_numbers[r]);
      const int i = ca >= 0 ? io::parse_int(row[static_cast<std::size_t>(ca)], w) : static_cast<int>(r) + 1;
      if (ce >= 0) exposure.push_back(io::parse_double(row[static_cast<std::size_t>(ce)], w));
      for (std::size_t d = 0; d < dev_cols.size(); ++d) {
        const std::string& s = row[static_cast<std::size_t>(dev_cols[d])];
        if (!s.empty()) recs.push_back({i, static_cast<int>(d) + 1, io::parse_double(s, w)});
      }
    }
    const int J = opt.development_periods > 0 ? opt.development_periods : static_cast<int>(dev_cols.size());
    t = detail::build(opt.line.empty() ? path.stem().string() : opt.line, recs, opt.accident_periods, J, where);
    if (ce >= 0) {
      if (static_cast<int>(exposure.size()) != t.accident_periods()) throw DataError(where + ": exposure column length mismatch");
      t.set_exposure(Eigen::Map<const Eigen::VectorXd>(exposure.data(), static_cast<Eigen::Index>(exposure.size())));
    }
  }
  detail::apply_sidecar(t, path);
  detail::check_interior(t, where);
  if (opt.kind == ValueKind::cumulative) t = difference(t);
  return t;
}

/// Reads every line of a long-layout file into a portfolio (lines in file order of first appearance).
inline TrianglePortfolio load_portfolio(const std::filesystem::path& path) {
  const io::CsvTable csv = io::read_csv(path);
  const int cl = csv.column("line");
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (const auto& row : csv.rows) {
    const std::string id = cl >= 0 ? row[static_cast<std::size_t>(cl)] : std::string("1");
    if (seen.insert(id).second) order.push_back(id);
  }
  std::vector<LossTriangle> lines;
  for (const auto& id : order) {
    LoadOptions o;
    o.line = id;
    lines.push_back(load_triangle(path, o));
  }
  return TrianglePortfolio(std::move(lines));
}

/// Canonical long-form CSV of the observed cells, plus a sidecar when the
/// triangle carries exposure or a non-standard mask.
inline void save_triangle(const LossTriangle& t, const std::filesystem::path& path) {
  std::string out = "line,accident,development,value\n";
  for (const Cell& c : t.observed_cells())
    out += t.line_id() + "," + std::to_string(c.i) + "," + std::to_string(c.j) + "," + io::format_number(t(c.i, c.j)) + "\n";
  io::write_text(path, out);
  const LossTriangle standard(t.line_id(), t.accident_periods(), t.development_periods());
  bool custom_mask = false;
  for (int i = 1; i <= t.accident_periods(); ++i)
    for (int j = 1; j <= t.development_periods(); ++j)
      if (t.state(i, j) != standard.state(i, j)) custom_mask = true;
  if (!t.exposure() && !custom_mask) return;
  nlohmann::json j;
  if (t.exposure()) j["exposure"] = std::vector<double>(t.exposure()->data(), t.exposure()->data() + t.exposure()->size());
  if (custom_mask) {
    std::vector<std::vector<int>> m(static_cast<std::size_t>(t.accident_periods()));
    for (int i = 1; i <= t.accident_periods(); ++i)
      for (int jj = 1; jj <= t.development_periods(); ++jj) {
        const CellState s = t.state(i, jj);
        m[static_cast<std::size_t>(i - 1)].push_back(s == CellState::observed ? 1 : s == CellState::future ? 0 : -1);
      }
    j["mask"] = m;
  }
  io::write_text(sidecar_path(path), j.dump(2) + "\n");
}

/// Long-form CSV of several lines (observed cells only).
inline void save_portfolio(const TrianglePortfolio& p, const std::filesystem::path& path) {
  std::string out = "line,accident,development,value\n";
  for (const auto& t : p)
    for (const Cell& c : t.observed_cells())
      out += t.line_id() + "," + std::to_string(c.i) + "," + std::to_string(c.j) + "," + io::format_number(t(c.i, c.j)) + "\n";
  io::write_text(path, out);
}

/// Sub-triangle made of the first `size` accident and development periods
/// (standard mask of the smaller square).
inline LossTriangle sub_triangle(const LossTriangle& t, int size) {
  if (size < 1 || size > t.accident_periods() || size > t.development_periods()) throw DataError("sub_triangle: bad size");
  LossTriangle out(t.line_id(), size, size);
  for (int i = 1; i <= size; ++i)
    for (int j = 1; j <= size; ++j) out(i, j) = t(i, j);
  if (t.exposure()) out.set_exposure(t.exposure()->head(size));
  return out;
}

}  // namespace shockres
