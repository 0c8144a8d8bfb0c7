#include "datacl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "datacl/config.hpp"

namespace datacl {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'C', 'L', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

void write_f64(std::ostream& out, double d) { write_u64(out, std::bit_cast<std::uint64_t>(d)); }

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

void put_matrix(Checkpoint& ck, const std::string& name, const Matrix& m) {
  NamedArray a;
  a.name = name;
  a.shape = {m.rows(), m.cols()};
  a.data.assign(m.data(), m.data() + m.size());
  ck.arrays.push_back(std::move(a));
}

void put_vector(Checkpoint& ck, const std::string& name, const std::vector<double>& v) {
  NamedArray a;
  a.name = name;
  a.shape = {v.size()};
  a.data = v;
  ck.arrays.push_back(std::move(a));
}

void put_rng(Checkpoint& ck, const std::string& name, const Rng& rng) {
  const std::uint64_t s = rng.state();
  put_vector(ck, name,
             {static_cast<double>(s & 0xFFFFFFFFULL), static_cast<double>(s >> 32)});
}

const NamedArray& need(const Checkpoint& ck, const std::string& name) {
  const NamedArray* a = ck.find(name);
  if (!a) throw std::runtime_error("checkpoint: missing array '" + name + "'");
  return *a;
}

Matrix get_matrix(const Checkpoint& ck, const std::string& name) {
  const NamedArray& a = need(ck, name);
  if (a.shape.size() != 2) throw std::runtime_error("checkpoint: array '" + name + "' not 2-d");
  return Matrix(a.shape[0], a.shape[1], a.data);
}

std::uint64_t get_rng_state(const Checkpoint& ck, const std::string& name) {
  const NamedArray& a = need(ck, name);
  if (a.data.size() != 2) throw std::runtime_error("checkpoint: bad rng array '" + name + "'");
  return static_cast<std::uint64_t>(a.data[0]) |
         (static_cast<std::uint64_t>(a.data[1]) << 32);
}

void put_accuracy(Checkpoint& ck, const std::string& prefix, const AccuracyMatrix& acc) {
  const std::size_t n = acc.n();
  std::vector<double> values(n * n, 0.0);
  std::vector<double> filled(n * n, 0.0);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t m = 0; m < n; ++m) {
      if (acc.filled(q, m)) {
        values[q * n + m] = acc.at(q, m);
        filled[q * n + m] = 1.0;
      }
    }
  }
  put_vector(ck, prefix + "/values", values);
  put_vector(ck, prefix + "/filled", filled);
}

AccuracyMatrix get_accuracy(const Checkpoint& ck, const std::string& prefix, std::size_t n) {
  AccuracyMatrix acc(n);
  const NamedArray& values = need(ck, prefix + "/values");
  const NamedArray& filled = need(ck, prefix + "/filled");
  if (values.data.size() != n * n || filled.data.size() != n * n) {
    throw std::runtime_error("checkpoint: accuracy matrix size mismatch");
  }
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t m = 0; m < n; ++m)
      if (filled.data[q * n + m] != 0.0) acc.set(q, m, values.data[q * n + m]);
  return acc;
}

void put_bank(Checkpoint& ck, const std::string& prefix, const ComponentBank& bank) {
  put_matrix(ck, prefix + "/W", bank.W);
  put_matrix(ck, prefix + "/K", bank.K);
  put_matrix(ck, prefix + "/A", bank.A);
  std::vector<double> frozen(bank.frozen.begin(), bank.frozen.end());
  put_vector(ck, prefix + "/frozen", frozen);
}

void get_bank(const Checkpoint& ck, const std::string& prefix, ComponentBank& bank) {
  bank.W = get_matrix(ck, prefix + "/W");
  bank.K = get_matrix(ck, prefix + "/K");
  bank.A = get_matrix(ck, prefix + "/A");
  const NamedArray& frozen = need(ck, prefix + "/frozen");
  bank.frozen.clear();
  for (double f : frozen.data) bank.frozen.push_back(f != 0.0 ? 1 : 0);
  if (bank.W.rows() != bank.components() * bank.l_w || bank.K.cols() != bank.components() ||
      bank.A.cols() != bank.components()) {
    throw std::runtime_error("checkpoint: bank '" + prefix + "' has inconsistent shapes");
  }
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const NamedArray& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, ck.version);
  write_u64(out, ck.config_hash);
  write_u32(out, ck.task_index);
  write_u64(out, ck.step);
  write_u32(out, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const NamedArray& a : ck.arrays) {
    write_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    write_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    std::size_t count = 1;
    for (std::uint64_t d : a.shape) {
      write_u64(out, d);
      count *= d;
    }
    if (count != a.data.size()) {
      throw std::runtime_error("checkpoint: array '" + a.name + "' shape/data mismatch");
    }
    for (double v : a.data) write_f64(out, v);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  }
  Checkpoint ck;
  ck.version = read_u32(in);
  if (ck.version != 1) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ck.version));
  }
  ck.config_hash = read_u64(in);
  ck.task_index = read_u32(in);
  ck.step = read_u64(in);
  const std::uint32_t count = read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::uint32_t name_len = read_u32(in);
    a.name.resize(name_len);
    in.read(a.name.data(), name_len);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    const std::uint32_t ndim = read_u32(in);
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      a.shape.push_back(read_u64(in));
      total *= a.shape.back();
    }
    a.data.resize(total);
    for (std::size_t e = 0; e < total; ++e) a.data[e] = read_f64(in);
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

Checkpoint snapshot_state(const TrainState& st) {
  Checkpoint ck;
  ck.config_hash = config_hash(st.cfg);
  ck.task_index = static_cast<std::uint32_t>(st.tasks_done);
  ck.step = st.global_step;

  const ModelState& model = st.model;
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const std::string p = "model/hidden" + std::to_string(l) + "/";
    put_matrix(ck, p + "W0", model.hidden[l].W0);
    put_matrix(ck, p + "b0", model.hidden[l].b0);
    put_matrix(ck, p + "B1", model.hidden[l].B1);
    put_matrix(ck, p + "A1", model.hidden[l].A1);
    put_matrix(ck, p + "B2", model.hidden[l].B2);
    put_matrix(ck, p + "A2", model.hidden[l].A2);
  }
  put_matrix(ck, "model/head/W", model.head.W);
  put_matrix(ck, "model/head/b", model.head.b);
  for (std::size_t l = 0; l < model.banks.size(); ++l) {
    put_bank(ck, "bank" + std::to_string(l), model.banks[l]);
  }
  for (std::size_t l = 0; l < model.banks_low.size(); ++l) {
    put_bank(ck, "bank_low" + std::to_string(l), model.banks_low[l]);
  }
  for (std::size_t t = 0; t < model.task_queries.size(); ++t) {
    for (std::size_t l = 0; l < model.task_queries[t].size(); ++l) {
      put_matrix(ck, "queries/" + std::to_string(t) + "/" + std::to_string(l),
                 model.task_queries[t][l]);
    }
  }

  put_matrix(ck, "buffer/x", st.buffer.x);
  put_vector(ck, "buffer/y", std::vector<double>(st.buffer.y.begin(), st.buffer.y.end()));
  put_vector(ck, "buffer/task",
             std::vector<double>(st.buffer.task_id.begin(), st.buffer.task_id.end()));

  put_accuracy(ck, "acc", st.acc);
  if (st.has_static) put_accuracy(ck, "acc_static", st.acc_static);

  put_rng(ck, "rng/train", st.rng_train);
  put_rng(ck, "rng/replay", st.rng_replay);
  put_rng(ck, "rng/restore", st.rng_restore);
  put_rng(ck, "rng/init", st.rng_init);
  return ck;
}

TrainState restore_state(const RunConfig& cfg, const Checkpoint& ck) {
  const std::uint64_t expect = config_hash(cfg);
  if (ck.config_hash != expect) {
    throw std::runtime_error("checkpoint: config hash mismatch (checkpoint " +
                             std::to_string(ck.config_hash) + ", config " +
                             std::to_string(expect) + "); refusing to resume");
  }
  TrainState st;
  st.cfg = cfg;
  st.tasks_done = ck.task_index;
  st.global_step = ck.step;
  st.has_static = cfg.flags.weighting;

  Rng scratch(0);
  st.model = build_model(cfg.model_config(), scratch);
  ModelState& model = st.model;
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const std::string p = "model/hidden" + std::to_string(l) + "/";
    model.hidden[l].W0 = get_matrix(ck, p + "W0");
    model.hidden[l].b0 = get_matrix(ck, p + "b0");
    model.hidden[l].B1 = get_matrix(ck, p + "B1");
    model.hidden[l].A1 = get_matrix(ck, p + "A1");
    model.hidden[l].B2 = get_matrix(ck, p + "B2");
    model.hidden[l].A2 = get_matrix(ck, p + "A2");
  }
  model.head.W = get_matrix(ck, "model/head/W");
  model.head.b = get_matrix(ck, "model/head/b");
  for (std::size_t l = 0; l < model.banks.size(); ++l) {
    get_bank(ck, "bank" + std::to_string(l), model.banks[l]);
  }
  for (std::size_t l = 0; l < model.banks_low.size(); ++l) {
    get_bank(ck, "bank_low" + std::to_string(l), model.banks_low[l]);
  }
  for (std::size_t t = 0; t < st.tasks_done; ++t) {
    std::vector<Matrix> qs;
    bool any = false;
    for (std::size_t l = 0; l < model.hidden.size(); ++l) {
      const std::string name = "queries/" + std::to_string(t) + "/" + std::to_string(l);
      if (ck.find(name)) {
        qs.push_back(get_matrix(ck, name));
        any = true;
      }
    }
    if (any) model.task_queries.push_back(std::move(qs));
  }

  st.buffer.x = get_matrix(ck, "buffer/x");
  for (double v : need(ck, "buffer/y").data) st.buffer.y.push_back(static_cast<int>(v));
  for (double v : need(ck, "buffer/task").data) st.buffer.task_id.push_back(static_cast<int>(v));

  st.acc = get_accuracy(ck, "acc", cfg.stream.n_tasks);
  st.acc_static = st.has_static && ck.find("acc_static/values")
                      ? get_accuracy(ck, "acc_static", cfg.stream.n_tasks)
                      : AccuracyMatrix(cfg.stream.n_tasks);

  st.rng_train.set_state(get_rng_state(ck, "rng/train"));
  st.rng_replay.set_state(get_rng_state(ck, "rng/replay"));
  st.rng_restore.set_state(get_rng_state(ck, "rng/restore"));
  st.rng_init.set_state(get_rng_state(ck, "rng/init"));
  return st;
}

}  // namespace datacl
