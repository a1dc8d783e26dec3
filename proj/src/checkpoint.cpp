// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "meshfield/error.hpp"

namespace meshfield {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'C', 'K'};

class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint64_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const ad::Tensor& t) {
    str(name);
    pod(static_cast<std::uint64_t>(t.rows()));
    pod(static_cast<std::uint64_t>(t.cols()));
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    bytes.insert(bytes.end(), p, p + t.size() * sizeof(double));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  ad::Tensor tensor_body() {
    const auto rows = pod<std::uint64_t>();
    const auto cols = pod<std::uint64_t>();
    if (cols != 0 && rows > (bytes_.size() - pos_) / sizeof(double) / cols) throw IoError("checkpoint truncated");
    ad::Tensor t(rows, cols);
    need(t.size() * sizeof(double));
    std::memcpy(t.data(), bytes_.data() + pos_, t.size() * sizeof(double));
    pos_ += t.size() * sizeof(double);
    return t;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw IoError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

// Every tensor in the state, keyed by a stable name.
template <class State, class Fn>
void for_each_tensor(State& s, Fn&& fn) {
  auto params = [](auto& st) {
    std::vector<ad::Parameter*> out;
    out.push_back(&st.lattice.offsets);
    out.push_back(&st.grid.values);
    for (auto* p : st.field.all_parameters()) out.push_back(p);
    return out;
  };
  auto& st = const_cast<TrainState&>(static_cast<const TrainState&>(s));
  const auto all = params(st);
  for (auto* p : all) fn(p->name, p->value);
  auto moments = [&](const std::string& prefix, AdamState& a, const std::vector<ad::Parameter*>& ps) {
    for (std::size_t i = 0; i < a.m.size() && i < ps.size(); ++i) {
      fn(prefix + "/" + ps[i]->name + "/m", a.m[i]);
      fn(prefix + "/" + ps[i]->name + "/v", a.v[i]);
    }
  };
  moments("adam", st.adam, st.network_parameters());
  moments("offsets_adam", st.offsets_adam, st.offset_parameters());
  moments("grid_adam", st.grid_adam, st.grid_parameters());
  moments("finetune_adam", st.finetune_adam, st.finetune_parameters());
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.pod(kCheckpointVersion);
  const std::string cfg = config_to_json(state.config);
  w.pod(fnv1a64(cfg));
  w.str(cfg);
  w.pod(static_cast<std::int32_t>(state.stage));
  w.pod(static_cast<std::uint64_t>(state.step));
  for (const AdamState* a : {&state.adam, &state.offsets_adam, &state.grid_adam, &state.finetune_adam}) {
    w.pod(a->step);
    w.pod(static_cast<std::uint64_t>(a->m.size()));
  }
  std::vector<std::pair<std::string, const ad::Tensor*>> tensors;
  for_each_tensor(state, [&](const std::string& name, const ad::Tensor& t) { tensors.emplace_back(name, &t); });
  w.pod(static_cast<std::uint64_t>(tensors.size()));
  for (const auto& [name, t] : tensors) w.tensor(name, *t);
  return std::move(w.bytes);
}

TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a checkpoint (bad magic)");
  std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
  Reader r(body);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  const auto hash = r.pod<std::uint64_t>();
  const std::string cfg_text = r.str();
  if (fnv1a64(cfg_text) != hash) throw IoError("checkpoint config hash mismatch");
  TrainState state(config_from_json(cfg_text));
  state.stage = r.pod<std::int32_t>();
  state.step = r.pod<std::uint64_t>();
  if (state.stage < 1 || state.stage > 4) throw IoError("checkpoint has invalid stage");
  std::array<AdamState*, 4> adams{&state.adam, &state.offsets_adam, &state.grid_adam, &state.finetune_adam};
  for (AdamState* a : adams) {
    const auto step = r.pod<std::uint64_t>();
    const auto n = r.pod<std::uint64_t>();
    if (a == &state.finetune_adam && n > 0) state.finetune_adam = AdamState(state.finetune_parameters(), AdamConfig{});
    if (a->m.size() != n) throw IoError("checkpoint optimizer layout mismatch");
    a->step = step;
  }
  std::map<std::string, ad::Tensor> loaded;
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    loaded[name] = r.tensor_body();
  }
  if (!r.done()) throw IoError("checkpoint has trailing bytes");
  for_each_tensor(state, [&](const std::string& name, const ad::Tensor& t) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
    if (!it->second.same_shape(t)) throw IoError("checkpoint tensor '" + name + "' has the wrong shape");
    const_cast<ad::Tensor&>(t) = it->second;
  });
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  const auto bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace meshfield
