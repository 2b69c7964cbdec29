#pragma once

// Response matrices: synthetic generation with known ground truth, text
// ingestion and export, binarization and held-out splitting.

#include "irtvi/autodiff.hpp"
#include "irtvi/error.hpp"
#include "irtvi/models.hpp"
#include "irtvi/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

namespace irtvi {

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class DataKind { binary, polytomous };

inline std::string to_string(DataKind k) { return k == DataKind::binary ? "binary" : "polytomous"; }

inline DataKind parse_data_kind(std::string_view s) {
  if (s == "binary") return DataKind::binary;
  if (s == "polytomous") return DataKind::polytomous;
  throw InvalidInput("unknown data kind '" + std::string(s) + "'");
}

struct ResponseDataset {
  Matrix values;  // unobserved cells hold 0
  Mask mask;      // true = observed
  DataKind kind = DataKind::binary;
  std::vector<std::string> item_ids;  // optional header

  Eigen::Index persons() const { return values.rows(); }
  Eigen::Index items() const { return values.cols(); }
  Eigen::Index observed_count() const { return mask.count(); }
  Matrix mask_matrix() const { return mask.cast<double>(); }

  void validate() const {
    if (values.rows() != mask.rows() || values.cols() != mask.cols()) {
      throw InvalidInput("dataset values and mask shapes differ");
    }
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      for (Eigen::Index j = 0; j < values.cols(); ++j) {
        if (!mask(i, j)) continue;
        const double v = values(i, j);
        const bool ok = kind == DataKind::binary ? (v == 0.0 || v == 1.0) : (v >= 0.0 && v <= 1.0);
        if (!ok) {
          throw InvalidInput("value " + std::to_string(v) + " at row " + std::to_string(i + 1) +
                             ", column " + std::to_string(j + 1) + " is invalid for " +
                             to_string(kind) + " data");
        }
      }
    }
  }

  // Same values, different observation mask.
  ResponseDataset with_mask(const Mask& m) const {
    ResponseDataset out = *this;
    out.mask = m;
    out.values = values.cwiseProduct(m.cast<double>());
    return out;
  }
};

inline ResponseKind response_kind_for(DataKind k) {
  return k == DataKind::binary ? ResponseKind::bernoulli : ResponseKind::truncated_normal;
}

struct GroundTruth {
  Matrix abilities;  // (N, K)
  ItemBank items;
};

struct SyntheticData {
  ResponseDataset dataset;
  GroundTruth truth;
};

// Draw from N(mean, sigma) restricted to [0, 1].
inline double sample_truncated_normal(Rng& rng, double mean, double sigma) {
  std::normal_distribution<double> normal(mean, sigma);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const double x = normal(rng);
    if (x >= 0.0 && x <= 1.0) return x;
  }
  return std::clamp(mean, 0.0, 1.0);
}

// Abilities and item parameters from N(0, 1); one response draw per cell.
inline SyntheticData generate_synthetic(Eigen::Index n, Eigen::Index m, Eigen::Index k,
                                        Family family, std::uint64_t seed) {
  if (n < 1 || m < 1 || k < 1) throw InvalidInput("N, M and K must all be >= 1");
  if (family == Family::two_pl && k > 1) family = Family::mirt_two_pl;
  if (family == Family::three_pl) {
    throw InvalidInput(
        "3pl synthetic data is not supported: the guessing parameter introduces invariances "
        "that need far more data; 3pl is not recommended for small to medium datasets");
  }
  if (family != Family::one_pl && family != Family::two_pl && family != Family::mirt_two_pl) {
    throw InvalidInput("synthetic generation supports 1pl and 2pl only, got " + to_string(family));
  }
  check_family_dim(family, k);

  Rng ability_rng = make_stream(seed, "data/abilities");
  Rng item_rng = make_stream(seed, "data/items");
  Rng response_rng = make_stream(seed, "data/responses");

  SyntheticData out;
  out.truth.abilities = standard_normal(ability_rng, n, k);
  out.truth.items.family = family;
  out.truth.items.dim = k;
  out.truth.items.params = standard_normal(item_rng, m, item_width(family, k));

  Rng unused = make_stream(seed, "data/init");
  GenerativeModel model(family, k, ResponseKind::bernoulli, unused);
  const Matrix p = model.probability(out.truth.abilities, out.truth.items.params);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.dataset.kind = DataKind::binary;
  out.dataset.values.resize(n, m);
  out.dataset.mask = Mask::Constant(n, m, true);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) out.dataset.values(i, j) = unit(response_rng) < p(i, j) ? 1.0 : 0.0;
  }
  return out;
}

// 2PL-layout abilities and items from N(0, 1), with responses driven by an
// arbitrary curve of the margin a.k + d instead of the logistic.
inline SyntheticData generate_with_curve(Eigen::Index n, Eigen::Index m, Eigen::Index k,
                                         const std::function<double(double)>& curve,
                                         DataKind kind, std::uint64_t seed,
                                         double response_sigma = 0.1) {
  if (n < 1 || m < 1 || k < 1) throw InvalidInput("N, M and K must all be >= 1");
  Rng ability_rng = make_stream(seed, "data/abilities");
  Rng item_rng = make_stream(seed, "data/items");
  Rng response_rng = make_stream(seed, "data/responses");
  SyntheticData out;
  out.truth.abilities = standard_normal(ability_rng, n, k);
  out.truth.items.family = k == 1 ? Family::two_pl : Family::mirt_two_pl;
  out.truth.items.dim = k;
  out.truth.items.params = standard_normal(item_rng, m, k + 1);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.dataset.kind = kind;
  out.dataset.values.resize(n, m);
  out.dataset.mask = Mask::Constant(n, m, true);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double margin =
          out.truth.abilities.row(i).dot(out.truth.items.params.row(j).head(k)) +
          out.truth.items.params(j, k);
      const double mean = std::clamp(curve(margin), 0.0, 1.0);
      out.dataset.values(i, j) = kind == DataKind::binary
                                     ? (unit(response_rng) < mean ? 1.0 : 0.0)
                                     : sample_truncated_normal(response_rng, mean, response_sigma);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text format: one person per row, comma separated, NA for missing, optional
// header row of item identifiers, '#' comment lines ignored.

struct LoadOptions {
  DataKind kind = DataKind::binary;
  bool header = false;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

inline std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

}  // namespace detail

inline ResponseDataset parse_matrix(std::istream& in, const LoadOptions& options) {
  std::vector<std::vector<double>> values;
  std::vector<std::vector<bool>> observed;
  ResponseDataset out;
  out.kind = options.kind;
  std::string line;
  std::size_t line_no = 0;
  bool header_pending = options.header;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto cells = detail::split_cells(t);
    if (header_pending) {
      out.item_ids = cells;
      header_pending = false;
      continue;
    }
    const std::size_t width = out.item_ids.empty() ? (values.empty() ? cells.size() : values.front().size())
                                                   : out.item_ids.size();
    if (cells.size() != width) {
      throw InvalidInput("line " + std::to_string(line_no) + ": expected " +
                         std::to_string(width) + " cells, found " + std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size(), 0.0);
    std::vector<bool> obs(cells.size(), false);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string& cell = cells[c];
      if (cell == "NA") continue;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw InvalidInput("line " + std::to_string(line_no) + ", column " +
                           std::to_string(c + 1) + ": non-numeric cell '" + cell + "'");
      }
      const bool ok = options.kind == DataKind::binary ? (v == 0.0 || v == 1.0)
                                                       : (v >= 0.0 && v <= 1.0);
      if (!ok) {
        throw InvalidInput("line " + std::to_string(line_no) + ", column " +
                           std::to_string(c + 1) + ": value " + cell + " is invalid for " +
                           to_string(options.kind) + " data");
      }
      row[c] = v;
      obs[c] = true;
    }
    values.push_back(std::move(row));
    observed.push_back(std::move(obs));
  }
  if (values.empty()) throw InvalidInput("no rows");
  const auto n = static_cast<Eigen::Index>(values.size());
  const auto m = static_cast<Eigen::Index>(values.front().size());
  out.values.resize(n, m);
  out.mask.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      out.values(i, j) = values[i][j];
      out.mask(i, j) = observed[i][j];
    }
  }
  return out;
}

inline ResponseDataset load_matrix(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_matrix(in, options);
}

inline void write_matrix(std::ostream& out, const ResponseDataset& data,
                         const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) out << "# " << c << '\n';
  if (!data.item_ids.empty()) {
    for (std::size_t j = 0; j < data.item_ids.size(); ++j) {
      out << (j ? "," : "") << data.item_ids[j];
    }
    out << '\n';
  }
  for (Eigen::Index i = 0; i < data.persons(); ++i) {
    for (Eigen::Index j = 0; j < data.items(); ++j) {
      if (j) out << ',';
      if (!data.mask(i, j)) {
        out << "NA";
      } else {
        out << detail::format_double(data.values(i, j));
      }
    }
    out << '\n';
  }
}

inline void save_matrix(const std::string& path, const ResponseDataset& data,
                        const std::vector<std::string>& comments = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_matrix(out, data, comments);
  if (!out) throw IoError("write to '" + path + "' failed");
}

// Companion file: "abilities,N,K" section then "items,M,P,family", one entity
// per row.
inline void write_ground_truth(std::ostream& out, const GroundTruth& truth,
                               const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "abilities," << truth.abilities.rows() << ',' << truth.abilities.cols() << '\n';
  for (Eigen::Index i = 0; i < truth.abilities.rows(); ++i) {
    for (Eigen::Index c = 0; c < truth.abilities.cols(); ++c) {
      out << (c ? "," : "") << detail::format_double(truth.abilities(i, c));
    }
    out << '\n';
  }
  const auto& p = truth.items.params;
  out << "items," << p.rows() << ',' << p.cols() << ',' << to_string(truth.items.family) << '\n';
  for (Eigen::Index j = 0; j < p.rows(); ++j) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      out << (c ? "," : "") << detail::format_double(p(j, c));
    }
    out << '\n';
  }
}

inline void save_ground_truth(const std::string& path, const GroundTruth& truth,
                              const std::vector<std::string>& comments = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_ground_truth(out, truth, comments);
}

inline GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = detail::trim(line);
    if (!t.empty() && t.front() != '#') lines.push_back(t);
  }
  std::size_t pos = 0;
  auto read_block = [&](const std::string& tag, Matrix& target) -> std::vector<std::string> {
    if (pos >= lines.size()) throw InvalidInput("ground truth: missing '" + tag + "' section");
    auto head = detail::split_cells(lines[pos++]);
    if (head.size() < 3 || head[0] != tag) throw InvalidInput("ground truth: expected '" + tag + "' header");
    const long rows = std::stol(head[1]);
    const long cols = std::stol(head[2]);
    target.resize(rows, cols);
    for (long r = 0; r < rows; ++r) {
      if (pos >= lines.size()) throw InvalidInput("ground truth: truncated '" + tag + "' section");
      auto cells = detail::split_cells(lines[pos++]);
      if (static_cast<long>(cells.size()) != cols) throw InvalidInput("ground truth: ragged row in '" + tag + "'");
      for (long c = 0; c < cols; ++c) target(r, c) = std::stod(cells[c]);
    }
    return head;
  };
  GroundTruth truth;
  read_block("abilities", truth.abilities);
  auto head = read_block("items", truth.items.params);
  truth.items.family = head.size() > 3 ? parse_family(head[3]) : Family::two_pl;
  truth.items.dim = truth.abilities.cols();
  return truth;
}

// ---------------------------------------------------------------------------

// Observed values >= 0.5 become 1, the rest 0; the mask is untouched.
inline ResponseDataset binarize(const ResponseDataset& data) {
  ResponseDataset out = data;
  out.kind = DataKind::binary;
  for (Eigen::Index i = 0; i < data.persons(); ++i) {
    for (Eigen::Index j = 0; j < data.items(); ++j) {
      if (data.mask(i, j)) out.values(i, j) = data.values(i, j) >= 0.5 ? 1.0 : 0.0;
    }
  }
  return out;
}

struct HoldoutSplit {
  Mask train;
  Mask heldout;
};

// Uniformly random partition of the observed cells; floor(fraction * observed)
// cells are held out.
inline HoldoutSplit holdout_split(const ResponseDataset& data, double fraction,
                                  std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidInput("holdout fraction must lie in (0, 1)");
  std::vector<Eigen::Index> cells;
  for (Eigen::Index i = 0; i < data.persons(); ++i) {
    for (Eigen::Index j = 0; j < data.items(); ++j) {
      if (data.mask(i, j)) cells.push_back(i * data.items() + j);
    }
  }
  const auto count = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(cells.size()) + 1e-9));
  if (count == 0) throw InvalidInput("holdout fraction selects zero cells");
  Rng rng = make_stream(seed, "split");
  // partial Fisher-Yates over the first `count` slots
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
    std::swap(cells[i], cells[pick(rng)]);
  }
  HoldoutSplit out{data.mask, Mask::Constant(data.persons(), data.items(), false)};
  for (std::size_t i = 0; i < count; ++i) {
    const auto r = cells[i] / data.items();
    const auto c = cells[i] % data.items();
    out.train(r, c) = false;
    out.heldout(r, c) = true;
  }
  return out;
}

}  // namespace irtvi
