#ifndef PRIORSWAP_IO_HPP
#define PRIORSWAP_IO_HPP

// CSV persistence for datasets, sample sets, pseudo-points, chains, and
// estimate records. Numbers are written in shortest round-trip form and
// parsed with std::from_chars, so files are locale-independent and
// reloading is bit-exact.

#include "priorswap/false_posterior.hpp"

#include <charconv>
#include <fstream>
#include <map>

namespace priorswap {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw InvalidInput("cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& s : out) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    while (!s.empty() && s.front() == ' ') s.erase(s.begin());
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> comments;  // lines starting with '#', without the '#'
  std::vector<std::string> header;
  Matrix data;

  Eigen::Index column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<Eigen::Index>(i);
    return -1;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(line.substr(1));
      continue;
    }
    if (t.header.empty()) {
      t.header = split(line, ',');
      continue;
    }
    const auto cells = split(line, ',');
    if (cells.size() != t.header.size())
      throw InvalidInput("'" + path + "': row " + std::to_string(rows.size() + 1) + " has " +
                         std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_double(c));
    rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw InvalidInput("'" + path + "' has no header row");
  t.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      t.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return t;
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  return out;
}

inline void write_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
  os << '\n';
}

inline std::vector<std::string> theta_header(Eigen::Index d, const std::string& prefix = "theta_") {
  std::vector<std::string> h;
  for (Eigen::Index i = 0; i < d; ++i) h.push_back(prefix + std::to_string(i));
  return h;
}

// --- datasets ---------------------------------------------------------------

/// Header row, one column per feature, final column the response or label.
/// NormalMean datasets have no response column: every column is an
/// observation coordinate.
inline void write_dataset_csv(const std::string& path, const LikelihoodModel& model) {
  auto out = open_for_write(path);
  const Eigen::Index n = model_size(model), d = model_dimension(model);
  const bool has_response = model_tag(model) != ModelTag::NormalMean;
  auto header = theta_header(d, has_response ? "x_" : "obs_");
  if (has_response) header.emplace_back("y");
  write_row(out, header);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector p = data_point(model, i);
    std::vector<std::string> cells;
    for (Eigen::Index c = 0; c < p.size(); ++c) cells.push_back(format_double(p[c]));
    write_row(out, cells);
  }
}

inline LikelihoodModel read_dataset_csv(const std::string& path, ModelTag tag, double noise_variance = 1.0) {
  const CsvTable t = read_csv(path);
  const Eigen::Index cols = t.data.cols();
  if (tag == ModelTag::NormalMean) return NormalMean(t.data, cols);
  if (cols < 2) throw InvalidInput("'" + path + "' needs at least one feature column and a response column");
  Matrix X = t.data.leftCols(cols - 1);
  Vector y = t.data.col(cols - 1);
  if (tag == ModelTag::LinearRegression) return LinearRegression(std::move(X), std::move(y), noise_variance);
  return LogisticRegression(std::move(X), std::move(y));
}

// --- sample sets and chains ---------------------------------------------------

inline void write_sample_set_csv(const std::string& path, const SampleSet& s) {
  auto out = open_for_write(path);
  auto header = theta_header(s.samples.cols());
  const bool timed = !s.wall_ns.empty();
  if (timed) header.emplace_back("t_wall_ns");
  write_row(out, header);
  for (Eigen::Index t = 0; t < s.samples.rows(); ++t) {
    std::vector<std::string> cells;
    for (Eigen::Index c = 0; c < s.samples.cols(); ++c) cells.push_back(format_double(s.samples(t, c)));
    if (timed) cells.push_back(std::to_string(s.wall_ns[static_cast<std::size_t>(t)]));
    write_row(out, cells);
  }
}

inline SampleSet read_sample_set_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  SampleSet s;
  Eigen::Index d = 0;
  while (d < static_cast<Eigen::Index>(t.header.size()) && t.header[static_cast<std::size_t>(d)].rfind("theta_", 0) == 0) ++d;
  if (d == 0) throw InvalidInput("'" + path + "' has no theta_ columns");
  s.samples = t.data.leftCols(d);
  if (const auto c = t.column("t_wall_ns"); c >= 0)
    for (Eigen::Index r = 0; r < t.data.rows(); ++r) s.wall_ns.push_back(static_cast<std::int64_t>(t.data(r, c)));
  return s;
}

/// SampleSet schema plus `accepted` and `t_wall_ns`; `log_weight` when given.
inline void write_chain_csv(const std::string& path, const Chain& chain, const Vector* log_weights = nullptr) {
  auto out = open_for_write(path);
  auto header = theta_header(chain.dimension());
  header.emplace_back("accepted");
  header.emplace_back("t_wall_ns");
  if (log_weights) header.emplace_back("log_weight");
  write_row(out, header);
  for (Eigen::Index t = 0; t < chain.length(); ++t) {
    std::vector<std::string> cells;
    for (Eigen::Index c = 0; c < chain.dimension(); ++c) cells.push_back(format_double(chain.samples(t, c)));
    cells.push_back(std::to_string(static_cast<int>(chain.accepted[static_cast<std::size_t>(t)])));
    cells.push_back(std::to_string(chain.wall_ns[static_cast<std::size_t>(t)]));
    if (log_weights) cells.push_back(format_double((*log_weights)[t]));
    write_row(out, cells);
  }
}

// --- pseudo-points --------------------------------------------------------------

/// k rows x p columns preceded by one metadata line "# k=..,n=..,model=..,...".
inline void write_alpha_csv(const std::string& path, const ParametricAlpha& alpha) {
  auto out = open_for_write(path);
  const auto& f = alpha.family();
  out << "# k=" << alpha.k() << ",n=" << format_double(alpha.n()) << ",model=" << model_tag_name(f.tag)
      << ",d=" << f.d << ",noise_variance=" << format_double(f.noise_variance) << '\n';
  write_row(out, theta_header(alpha.points().cols(), "alpha_"));
  for (Eigen::Index j = 0; j < alpha.k(); ++j) {
    std::vector<std::string> cells;
    for (Eigen::Index c = 0; c < alpha.points().cols(); ++c) cells.push_back(format_double(alpha.points()(j, c)));
    write_row(out, cells);
  }
}

inline std::map<std::string, std::string> parse_metadata(const std::string& line) {
  std::map<std::string, std::string> kv;
  for (const auto& item : split(line, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return kv;
}

inline ParametricAlpha read_alpha_csv(const std::string& path, const PriorSpec& false_prior) {
  const CsvTable t = read_csv(path);
  if (t.comments.empty()) throw InvalidInput("'" + path + "' is missing the metadata line");
  const auto meta = parse_metadata(t.comments.front());
  for (const char* key : {"k", "n", "model", "d"})
    if (!meta.count(key)) throw InvalidInput(std::string("alpha metadata is missing '") + key + "'");
  ModelFamily f;
  f.tag = parse_model_tag(meta.at("model"));
  f.d = static_cast<Eigen::Index>(std::stoll(meta.at("d")));
  if (meta.count("noise_variance")) f.noise_variance = parse_double(meta.at("noise_variance"));
  if (static_cast<Eigen::Index>(std::stoll(meta.at("k"))) != t.data.rows())
    throw InvalidInput("alpha metadata k does not match the row count");
  return ParametricAlpha(t.data, parse_double(meta.at("n")), false_prior, f);
}

// --- estimate records ------------------------------------------------------------

struct EstimateRecord {
  std::string method;
  std::string prior;
  std::size_t T = 0;
  std::size_t T_f = 0;
  std::int64_t wall_ns = 0;
  double posterior_error = 0.0;
  double ess = 0.0;
};

inline void write_estimate_records(const std::string& path, const std::vector<EstimateRecord>& records) {
  auto out = open_for_write(path);
  write_row(out, {"method", "T", "T_f", "wall_ns", "posterior_error", "ess"});
  for (const auto& r : records)
    write_row(out, {r.method, std::to_string(r.T), std::to_string(r.T_f), std::to_string(r.wall_ns),
                    format_double(r.posterior_error), format_double(r.ess)});
}

}  // namespace priorswap

#endif  // PRIORSWAP_IO_HPP
