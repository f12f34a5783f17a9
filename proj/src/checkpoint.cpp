#include "wishflow/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace wishflow::checkpoint {

using ad::Matrix;

namespace {

void write_array(std::ofstream &out, const Matrix &m) {
  // Row-major little-endian doubles (Eigen default storage is column-major).
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) {
      double v = m(i, j);
      out.write(reinterpret_cast<const char *>(&v), sizeof v);
    }
}

Matrix read_array(std::ifstream &in, long rows, long cols, std::size_t offset,
                  const std::string &what) {
  in.seekg(static_cast<std::streamoff>(offset));
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) {
      double v;
      in.read(reinterpret_cast<char *>(&v), sizeof v);
      if (!in) throw ParseError("checkpoint: truncated " + what);
      m(i, j) = v;
    }
  return m;
}

} // namespace

void save(const std::string &dir, const ParamStore &store, const train::AdamState *opt,
          long iter, const std::string &config_snapshot) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.txt");
  std::ofstream params(dir + "/params.bin", std::ios::binary);
  if (!manifest || !params) throw ParseError("checkpoint: cannot write to " + dir);

  manifest << "# iter " << iter << "\n";
  if (opt)
    manifest << "# adam step " << opt->step << " lr " << opt->lr << " beta1 " << opt->beta1
             << " beta2 " << opt->beta2 << "\n";
  std::size_t offset = 0;
  for (const auto &kv : store.values()) {
    manifest << kv.first << " " << kv.second.rows() << " " << kv.second.cols() << " " << offset
             << " " << (store.trainable(kv.first) ? 1 : 0) << "\n";
    write_array(params, kv.second);
    offset += static_cast<std::size_t>(kv.second.size()) * sizeof(double);
  }

  if (opt) {
    std::ofstream ob(dir + "/optimizer.bin", std::ios::binary);
    Matrix zero;
    for (const auto &kv : store.values()) {
      auto it = opt->m.find(kv.first);
      if (it != opt->m.end()) write_array(ob, it->second);
      else write_array(ob, Matrix::Zero(kv.second.rows(), kv.second.cols()));
    }
    for (const auto &kv : store.values()) {
      auto it = opt->v.find(kv.first);
      if (it != opt->v.end()) write_array(ob, it->second);
      else write_array(ob, Matrix::Zero(kv.second.rows(), kv.second.cols()));
    }
  }

  std::ofstream snap(dir + "/config.snapshot");
  snap << config_snapshot;
}

Loaded load(const std::string &dir, ParamStore &store, train::AdamState *opt) {
  std::ifstream manifest(dir + "/manifest.txt");
  if (!manifest) throw ParseError("checkpoint: cannot read " + dir + "/manifest.txt");
  std::ifstream params(dir + "/params.bin", std::ios::binary);
  if (!params) throw ParseError("checkpoint: cannot read " + dir + "/params.bin");

  Loaded out;
  std::size_t total = 0;
  struct Entry {
    std::string name;
    long rows, cols;
    std::size_t offset;
    bool trainable;
  };
  std::vector<Entry> entries;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line);
      std::string hash, key;
      ss >> hash >> key;
      if (key == "iter") ss >> out.iter;
      if (key == "adam" && opt) {
        std::string field;
        while (ss >> field) {
          if (field == "step") ss >> opt->step;
          else if (field == "lr") ss >> opt->lr;
          else if (field == "beta1") ss >> opt->beta1;
          else if (field == "beta2") ss >> opt->beta2;
        }
      }
      continue;
    }
    Entry e;
    std::istringstream ss(line);
    int tr = 1;
    if (!(ss >> e.name >> e.rows >> e.cols >> e.offset >> tr))
      throw ParseError("checkpoint: bad manifest line: " + line);
    e.trainable = tr != 0;
    entries.push_back(e);
    total += static_cast<std::size_t>(e.rows * e.cols) * sizeof(double);
  }

  std::ifstream ob(dir + "/optimizer.bin", std::ios::binary);
  for (const Entry &e : entries) {
    Matrix m = read_array(params, e.rows, e.cols, e.offset, "params.bin (" + e.name + ")");
    if (store.has(e.name)) {
      if (store.at(e.name).rows() != e.rows || store.at(e.name).cols() != e.cols)
        throw DimensionError("checkpoint: shape mismatch for " + e.name);
      store.at(e.name) = m;
    } else {
      store.add(e.name, m);
    }
    store.set_trainable(e.name, e.trainable);
    if (opt && ob) {
      opt->m[e.name] = read_array(ob, e.rows, e.cols, e.offset, "optimizer.bin m");
      opt->v[e.name] = read_array(ob, e.rows, e.cols, total + e.offset, "optimizer.bin v");
    }
  }

  std::ifstream snap(dir + "/config.snapshot");
  if (snap) {
    std::ostringstream ss;
    ss << snap.rdbuf();
    out.config_snapshot = ss.str();
  }
  return out;
}

} // namespace wishflow::checkpoint
