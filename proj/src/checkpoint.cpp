// SPDX-License-Identifier: Apache-2.0
#include "mmguide/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mmguide/config.hpp"
#include "mmguide/errors.hpp"
#include "mmguide/format.hpp"

namespace mmguide {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'M', 'G', 'C', 'K', 'P', 'T', '\0'};

template <class T> void put(std::ostream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

template <class T> T get(std::istream &is) {
  T v{};
  if (!is.read(reinterpret_cast<char *>(&v), sizeof v))
    throw CheckpointMismatch("checkpoint truncated");
  return v;
}

void put_tensor(std::ostream &os, const std::string &name,
                const NamedTensor &t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(t.rows));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(t.cols));
  os.write(reinterpret_cast<const char *>(t.data),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

} // namespace

void save_checkpoint(std::ostream &os, const Checkpoint &ck) {
  KeyValueConfig kv = model_key_values(ck.cfg);
  kv.set("meta.epochs_done", std::to_string(ck.epochs_done));
  for (const auto &[k, v] : ck.meta)
    kv.set("meta." + k, v);
  if (ck.optimizer) {
    const AdamWConfig &hp = ck.optimizer->hp;
    kv.set("adam.lr", format_double(hp.lr));
    kv.set("adam.beta1", format_double(hp.beta1));
    kv.set("adam.beta2", format_double(hp.beta2));
    kv.set("adam.eps", format_double(hp.eps));
    kv.set("adam.weight_decay", format_double(hp.weight_decay));
    kv.set("adam.step", std::to_string(ck.optimizer->step));
  }
  std::ostringstream text;
  kv.write(text);
  const std::string manifest = text.str();

  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));

  ModelParams params = ck.params;
  std::vector<std::pair<std::string, NamedTensor>> records;
  for (const auto &t : trainable_tensors(params))
    records.emplace_back(t.name, t);
  for (const auto &t : buffer_tensors(params))
    records.emplace_back(t.name, t);
  std::optional<OptimizerState> opt = ck.optimizer;
  if (opt) {
    for (const auto &t : trainable_tensors(opt->first_moment))
      records.emplace_back("adam.m." + t.name, t);
    for (const auto &t : trainable_tensors(opt->second_moment))
      records.emplace_back("adam.v." + t.name, t);
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto &[name, t] : records)
    put_tensor(os, name, t);
  if (!os)
    throw std::runtime_error("checkpoint write failed");
}

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  save_checkpoint(os, ck);
}

Checkpoint load_checkpoint(std::istream &is) {
  char magic[sizeof kMagic];
  if (!is.read(magic, sizeof magic) ||
      std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw CheckpointMismatch("not a checkpoint file");
  if (get<std::uint32_t>(is) != kCheckpointVersion)
    throw CheckpointMismatch("unsupported checkpoint version");
  const auto manifest_size = get<std::uint64_t>(is);
  if (manifest_size > (1u << 24))
    throw CheckpointMismatch("checkpoint manifest too large");
  std::string manifest(manifest_size, '\0');
  if (!is.read(manifest.data(), static_cast<std::streamsize>(manifest_size)))
    throw CheckpointMismatch("checkpoint truncated");

  Checkpoint ck;
  KeyValueConfig kv;
  try {
    kv = KeyValueConfig::parse(manifest, true);
    apply_model_keys(kv, ck.cfg);
    ck.cfg.validate();
  } catch (const std::exception &e) {
    throw CheckpointMismatch(std::string("bad checkpoint manifest: ") +
                             e.what());
  }
  for (const auto &[k, v] : kv.entries())
    if (k.rfind("meta.", 0) == 0 && k != "meta.epochs_done")
      ck.meta[k.substr(5)] = v;
  if (auto e = kv.get("meta.epochs_done"))
    ck.epochs_done = static_cast<int>(parse_int(*e));

  ck.params = ModelParams::zeros(ck.cfg);
  std::map<std::string, NamedTensor> slots;
  for (const auto &t : trainable_tensors(ck.params))
    slots.emplace(t.name, t);
  for (const auto &t : buffer_tensors(ck.params))
    slots.emplace(t.name, t);
  if (kv.get("adam.step")) {
    OptimizerState opt;
    opt.hp.lr = parse_double(*kv.get("adam.lr"));
    opt.hp.beta1 = parse_double(*kv.get("adam.beta1"));
    opt.hp.beta2 = parse_double(*kv.get("adam.beta2"));
    opt.hp.eps = parse_double(*kv.get("adam.eps"));
    opt.hp.weight_decay = parse_double(*kv.get("adam.weight_decay"));
    opt.step = parse_int(*kv.get("adam.step"));
    opt.first_moment = ck.params.zeros_like();
    opt.second_moment = ck.params.zeros_like();
    ck.optimizer = std::move(opt);
    for (const auto &t : trainable_tensors(ck.optimizer->first_moment))
      slots.emplace("adam.m." + t.name, t);
    for (const auto &t : trainable_tensors(ck.optimizer->second_moment))
      slots.emplace("adam.v." + t.name, t);
  }

  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is);
    if (len > 4096)
      throw CheckpointMismatch("tensor name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len))
      throw CheckpointMismatch("checkpoint truncated");
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    const auto it = slots.find(name);
    if (it == slots.end())
      throw CheckpointMismatch("unexpected tensor '" + name + "'");
    const NamedTensor &t = it->second;
    if (rows != static_cast<std::uint64_t>(t.rows) ||
        cols != static_cast<std::uint64_t>(t.cols))
      throw CheckpointMismatch("shape mismatch for tensor '" + name + "'");
    if (!is.read(reinterpret_cast<char *>(t.data),
                 static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw CheckpointMismatch("checkpoint truncated");
    slots.erase(it);
  }
  if (!slots.empty())
    throw CheckpointMismatch("missing tensor '" + slots.begin()->first + "'");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw CheckpointMismatch("cannot open checkpoint " + path.string());
  return load_checkpoint(is);
}

bool is_checkpoint_file(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  char magic[sizeof kMagic];
  return is.read(magic, sizeof magic) &&
         std::memcmp(magic, kMagic, sizeof kMagic) == 0;
}

Checkpoint checkpoint_from_state(const TrainState &state) {
  Checkpoint ck;
  ck.cfg = state.cfg;
  ck.params = state.params;
  ck.optimizer = state.optimizer;
  ck.epochs_done = state.epochs_done;
  return ck;
}

TrainState state_from_checkpoint(const Checkpoint &ck) {
  if (!ck.optimizer)
    throw CheckpointMismatch("checkpoint has no optimizer state to resume");
  TrainState s;
  s.cfg = ck.cfg;
  s.params = ck.params;
  s.optimizer = *ck.optimizer;
  s.epochs_done = ck.epochs_done;
  return s;
}

} // namespace mmguide
