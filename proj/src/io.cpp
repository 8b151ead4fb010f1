#include "vrgcn/io.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vrgcn/binary_io.hpp"

namespace vrgcn {

namespace {

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw InputError("cannot write " + path);
  return out;
}

[[noreturn]] void bad_line(const std::string& path, std::size_t line, const std::string& what) {
  throw InputError(path + ":" + std::to_string(line) + ": " + what);
}

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse(const std::string& token, T& out) {
  const std::string t = strip(token);
  if (t.empty()) return false;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

DatasetPaths DatasetPaths::in_directory(const std::string& dir, bool multilabel) {
  const std::filesystem::path d(dir);
  return {(d / "edges.txt").string(), (d / "features.csv").string(), (d / "labels.csv").string(),
          (d / "train.txt").string(), (d / "val.txt").string(),      (d / "test.txt").string(),
          multilabel};
}

std::vector<Edge> read_edge_list(const std::string& path) {
  std::ifstream in = open_input(path);
  std::vector<Edge> edges;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    line = strip(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string a, b, w, extra;
    ss >> a >> b >> w >> extra;
    Edge e{};
    if (!parse(a, e.u) || !parse(b, e.v)) bad_line(path, n, "expected 'u v [weight]'");
    if (!w.empty() && !parse(w, e.weight)) bad_line(path, n, "bad edge weight");
    if (!extra.empty()) bad_line(path, n, "too many fields");
    edges.push_back(e);
  }
  return edges;
}

Matrix read_features_csv(const std::string& path) {
  std::ifstream in = open_input(path);
  std::vector<double> data;
  std::size_t rows = 0, cols = 0;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (strip(line).empty()) continue;
    const auto cells = split(line, ',');
    if (rows == 0) cols = cells.size();
    if (cells.size() != cols) bad_line(path, n, "inconsistent column count");
    for (const auto& c : cells) {
      double v = 0.0;
      if (!parse(c, v)) bad_line(path, n, "bad number '" + strip(c) + "'");
      data.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw InputError(path + ": no feature rows");
  return Matrix(rows, cols, std::move(data));
}

Labels read_labels_csv(const std::string& path, std::size_t num_nodes, bool multilabel) {
  std::ifstream in = open_input(path);
  Labels labels;
  labels.multilabel = multilabel;
  labels.classes.assign(num_nodes, -1);
  std::vector<std::pair<NodeId, std::string>> bits;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (strip(line).empty()) continue;
    const auto cells = split(line, ',');
    NodeId v = 0;
    if (cells.size() != 2 || !parse(cells[0], v)) bad_line(path, n, "expected 'node,label'");
    if (v >= num_nodes) bad_line(path, n, "node id out of range");
    if (multilabel) {
      const std::string b = strip(cells[1]);
      if (b.empty() || b.find_first_not_of("01") != std::string::npos)
        bad_line(path, n, "expected a binary string");
      if (!bits.empty() && b.size() != bits.front().second.size())
        bad_line(path, n, "inconsistent label width");
      bits.emplace_back(v, b);
    } else {
      int c = 0;
      if (!parse(cells[1], c) || c < 0) bad_line(path, n, "bad class");
      labels.classes[v] = c;
      labels.num_classes = std::max(labels.num_classes, static_cast<std::size_t>(c) + 1);
    }
  }
  if (multilabel) {
    if (bits.empty()) throw InputError(path + ": no labels");
    labels.num_classes = bits.front().second.size();
    labels.multi_hot = Matrix(num_nodes, labels.num_classes);
    for (const auto& [v, b] : bits) {
      labels.classes[v] = 0;
      for (std::size_t c = 0; c < b.size(); ++c) labels.multi_hot(v, c) = b[c] == '1' ? 1.0 : 0.0;
    }
  }
  return labels;
}

std::vector<NodeId> read_node_ids(const std::string& path) {
  std::ifstream in = open_input(path);
  std::vector<NodeId> ids;
  std::string token;
  while (in >> token) {
    NodeId v = 0;
    if (!parse(token, v)) throw InputError(path + ": bad node id '" + token + "'");
    ids.push_back(v);
  }
  return ids;
}

Graph load_dataset(const DatasetPaths& paths) {
  Graph g;
  g.features = read_features_csv(paths.features);
  g.num_nodes = g.features.rows();
  const auto edges = read_edge_list(paths.edges);
  for (const Edge& e : edges)
    require(e.u < g.num_nodes && e.v < g.num_nodes, "load_dataset: edge endpoint out of range");
  g.adjacency = adjacency_from_edges(g.num_nodes, edges);
  g.labels = read_labels_csv(paths.labels, g.num_nodes, paths.multilabel);
  g.splits.train = read_node_ids(paths.train);
  g.splits.validation = read_node_ids(paths.validation);
  g.splits.test = read_node_ids(paths.test);
  g.validate();
  for (const auto* split : {&g.splits.train, &g.splits.validation, &g.splits.test})
    for (NodeId v : *split)
      require(g.labels.classes[v] >= 0, "load_dataset: split node without a label");
  return g;
}

void write_dataset(const Graph& graph, const std::string& dir) {
  graph.validate();
  std::filesystem::create_directories(dir);
  const DatasetPaths paths = DatasetPaths::in_directory(dir, graph.labels.multilabel);
  {
    std::ofstream out = open_output(paths.edges);
    out.precision(17);
    const SparseMatrix& a = graph.adjacency;
    for (std::size_t u = 0; u < a.rows(); ++u) {
      const auto cols = a.row_cols(u);
      const auto vals = a.row_values(u);
      for (std::size_t k = 0; k < cols.size(); ++k)
        if (u < cols[k]) out << u << ' ' << cols[k] << ' ' << vals[k] << '\n';
    }
  }
  {
    std::ofstream out = open_output(paths.features);
    out.precision(17);
    for (std::size_t r = 0; r < graph.features.rows(); ++r) {
      const auto row = graph.features.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
      out << '\n';
    }
  }
  {
    std::ofstream out = open_output(paths.labels);
    for (std::size_t v = 0; v < graph.num_nodes; ++v) {
      if (graph.labels.classes[v] < 0) continue;
      out << v << ',';
      if (graph.labels.multilabel) {
        for (std::size_t c = 0; c < graph.labels.num_classes; ++c)
          out << (graph.labels.multi_hot(v, c) > 0.5 ? '1' : '0');
      } else {
        out << graph.labels.classes[v];
      }
      out << '\n';
    }
  }
  const std::pair<const std::string*, const std::vector<NodeId>*> splits[] = {
      {&paths.train, &graph.splits.train},
      {&paths.validation, &graph.splits.validation},
      {&paths.test, &graph.splits.test}};
  for (const auto& [path, ids] : splits) {
    std::ofstream out = open_output(*path);
    for (NodeId v : *ids) out << v << '\n';
  }
}

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const CheckpointInfo& info) {
  params.validate();
  {
    std::ofstream out = open_output(path, std::ios::binary);
    for (const Matrix& w : params.weights)
      for (double v : w.values()) binary::write_f64(out, v);
    if (!out) throw InputError("failed writing " + path);
  }
  nlohmann::json meta;
  meta["layer_dims"] = params.layer_dims();
  meta["estimator"] = info.estimator;
  meta["seed"] = info.seed;
  meta["epoch"] = info.epoch;
  std::ofstream side = open_output(path + ".json");
  side << meta.dump(2) << '\n';
}

ModelParams load_checkpoint(const std::string& path, CheckpointInfo* info) {
  nlohmann::json meta;
  try {
    std::ifstream side = open_input(path + ".json");
    meta = nlohmann::json::parse(side);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ".json: " + e.what());
  }
  std::vector<std::size_t> dims;
  try {
    dims = meta.at("layer_dims").get<std::vector<std::size_t>>();
    if (info) {
      info->estimator = meta.at("estimator").get<std::string>();
      info->seed = meta.at("seed").get<std::uint64_t>();
      info->epoch = meta.at("epoch").get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ".json: " + e.what());
  }
  require(dims.size() >= 2, "load_checkpoint: need at least two layer dims");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  ModelParams params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Matrix w(dims[l], dims[l + 1]);
    for (double& v : w.values()) v = binary::read_f64(in);
    params.weights.push_back(std::move(w));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InputError(path + ": trailing bytes");
  return params;
}

}  // namespace vrgcn
