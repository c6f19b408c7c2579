#include "cdikt/cluster.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

namespace cdikt {

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

std::size_t ClusterAssignment::noise_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_distance: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_distance: zero vector");
  return 1.0 - dot / std::sqrt(na * nb);
}

ClusterAssignment dbscan(std::span<const std::vector<double>> points, const DbscanParams& params) {
  if (!(params.eps >= 0.0)) throw std::invalid_argument("dbscan: eps must be non-negative");
  if (params.min_samples < 1) throw std::invalid_argument("dbscan: min_samples must be at least 1");
  const std::size_t n = points.size();
  ClusterAssignment out;
  out.labels.assign(n, kNoise);
  if (n == 0 || params.eps == 0.0) return out;

  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    neighbors[i].push_back(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      if (cosine_distance(points[i], points[j]) <= params.eps) {
        neighbors[i].push_back(j);
        neighbors[j].push_back(i);
      }
    }
  }
  auto is_core = [&](std::size_t i) { return neighbors[i].size() >= params.min_samples; };

  constexpr int kUnvisited = -2;
  std::vector<int> label(n, kUnvisited);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    if (!is_core(i)) {
      label[i] = kNoise;
      continue;
    }
    const int id = next++;
    label[i] = id;
    std::deque<std::size_t> frontier(neighbors[i].begin(), neighbors[i].end());
    while (!frontier.empty()) {
      const std::size_t q = frontier.front();
      frontier.pop_front();
      if (label[q] == kNoise) label[q] = id;  // border point, not expanded
      if (label[q] != kUnvisited) continue;
      label[q] = id;
      if (is_core(q)) frontier.insert(frontier.end(), neighbors[q].begin(), neighbors[q].end());
    }
  }
  out.labels = std::move(label);
  out.cluster_count = static_cast<std::size_t>(next);
  return out;
}

ClusterAssignment dbscan(std::span<const Embedding> points, const DbscanParams& params) {
  std::vector<std::vector<double>> rows;
  rows.reserve(points.size());
  for (const auto& e : points) rows.push_back(e.vector);
  return dbscan(std::span<const std::vector<double>>(rows), params);
}

PurityReport purity(const ClusterAssignment& assignment, std::span<const std::size_t> locations) {
  if (locations.size() != assignment.labels.size()) {
    throw std::invalid_argument("purity: one location per point required");
  }
  std::vector<std::map<std::size_t, std::size_t>> counts(assignment.cluster_count);
  std::size_t clustered = 0;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    const int l = assignment.labels[i];
    if (l == kNoise) continue;
    ++counts.at(static_cast<std::size_t>(l))[locations[i]];
    ++clustered;
  }
  PurityReport r;
  if (clustered == 0) {
    r.all_noise = true;
    return r;
  }
  std::size_t agree = 0;
  for (const auto& c : counts) {
    std::size_t best = 0;
    for (const auto& [loc, k] : c) best = std::max(best, k);
    agree += best;
  }
  r.purity = static_cast<double>(agree) / static_cast<double>(clustered);
  return r;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_embeddings(const EmbeddingFile& file) {
  std::string out = std::to_string(file.dim) + " " + std::to_string(file.records.size()) + " " +
                    (file.view_tag.empty() ? "mixed" : file.view_tag) + "\n";
  for (const auto& e : file.records) {
    if (e.vector.size() != file.dim) throw std::invalid_argument("embedding '" + e.id + "' has wrong dimension");
    if (e.id.empty() || e.id.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("embedding id must be a non-empty token: '" + e.id + "'");
    }
    out += e.id;
    out += ' ';
    out += view_tag(e.view);
    out += ' ';
    out += e.location ? *e.location : "-";
    for (double v : e.vector) {
      out += ' ';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

namespace {

double parse_number(const std::string& token, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    throw ParseError(line, "not a number: '" + token + "'");
  }
  return v;
}

}  // namespace

EmbeddingFile parse_embeddings(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  EmbeddingFile file;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  std::size_t count = 0;
  {
    std::istringstream h(line);
    std::string dim_s, count_s, view, extra;
    if (!(h >> dim_s >> count_s >> view) || (h >> extra)) {
      throw ParseError(1, "header must be '<dim> <count> <view>'");
    }
    try {
      file.dim = std::stoul(dim_s);
      count = std::stoul(count_s);
    } catch (const std::exception&) {
      throw ParseError(1, "header dimension and count must be integers");
    }
    if (view != "d" && view != "s" && view != "mixed") throw ParseError(1, "unknown view tag '" + view + "'");
    file.view_tag = view;
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    Embedding e;
    std::string view, location, token;
    if (!(row >> e.id >> view >> location)) throw ParseError(lineno, "expected '<id> <view> <location>'");
    if (view.size() != 1 || (view[0] != 'd' && view[0] != 's')) {
      throw ParseError(lineno, "unknown view tag '" + view + "'");
    }
    e.view = parse_view(view[0]);
    if (location != "-") e.location = location;
    while (row >> token) e.vector.push_back(parse_number(token, lineno));
    if (e.vector.size() != file.dim) {
      throw ParseError(lineno, "expected " + std::to_string(file.dim) + " components, got " +
                                   std::to_string(e.vector.size()));
    }
    file.records.push_back(std::move(e));
  }
  if (file.records.size() != count) {
    throw ParseError(lineno, "header declares " + std::to_string(count) + " records, found " +
                                 std::to_string(file.records.size()));
  }
  return file;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& file) {
  const std::string text = format_embeddings(file);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

EmbeddingFile read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_embeddings(buf.str());
}

}  // namespace cdikt
