#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "patchlens/bpe.hpp"
#include "patchlens/model/transformer.hpp"

namespace patchlens::model {

// Layout (little-endian):
//   magic "PLCKPT\0\0", u32 version,
//   u64 header_len, header_len bytes of JSON {config, vocab, bpe, meta},
//   u32 tensor_count, then per tensor:
//     u32 name_len, name bytes, u64 rows, u64 cols, rows*cols f64 row-major.

inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'L', 'C', 'K', 'P', 'T', 0, 0};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("checkpoint truncated");
  return v;
}

inline std::string get_bytes(std::istream& is, std::uint64_t n) {
  if (n > (1ULL << 32)) throw Error("checkpoint field too large");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw Error("checkpoint truncated");
  return s;
}

}  // namespace ckpt_detail

/// A loaded checkpoint: the model plus the BPE model it was trained with.
template <class T>
struct Checkpoint {
  RepairModel<T> model;
  bpe::BpeModel bpe;
  nlohmann::json meta;
};

template <class T>
void save_checkpoint(std::ostream& os, const RepairModel<T>& m, const bpe::BpeModel& bpe,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  using namespace ckpt_detail;
  nlohmann::json header{{"config", to_json(m.config())},
                        {"vocab", m.vocab().symbols()},
                        {"bpe", bpe.to_string()},
                        {"meta", meta}};
  const std::string h = header.dump();
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  const auto& ps = m.params();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps[i];
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value.cols()));
    for (Eigen::Index k = 0; k < p.value.size(); ++k) put<double>(os, static_cast<double>(p.value.data()[k]));
  }
  if (!os) throw Error("checkpoint write failed");
}

template <class T>
Checkpoint<T> load_checkpoint(std::istream& is) {
  using namespace ckpt_detail;
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw Error("not a patchlens checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto header = nlohmann::json::parse(get_bytes(is, get<std::uint64_t>(is)));
  ModelConfig cfg = config_from_json(header.at("config"));
  Vocab vocab;
  {
    auto syms = header.at("vocab").get<std::vector<std::string>>();
    vocab = Vocab(syms);
    if (vocab.symbols() != syms) throw Error("checkpoint vocabulary is malformed");
  }
  Checkpoint<T> ck{RepairModel<T>(cfg, vocab), bpe::BpeModel::from_string(header.at("bpe").get<std::string>()),
                   header.value("meta", nlohmann::json::object())};
  const auto count = get<std::uint32_t>(is);
  if (count != ck.model.params().size()) throw Error("checkpoint tensor count does not match its config");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = get_bytes(is, get<std::uint32_t>(is));
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    auto& p = ck.model.params().at(name);
    if (static_cast<std::uint64_t>(p.value.rows()) != rows || static_cast<std::uint64_t>(p.value.cols()) != cols)
      throw Error("checkpoint tensor " + name + " has the wrong shape");
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = static_cast<T>(get<double>(is));
  }
  return ck;
}

template <class T>
void save_checkpoint_file(const std::filesystem::path& path, const RepairModel<T>& m, const bpe::BpeModel& bpe,
                          const nlohmann::json& meta = nlohmann::json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  save_checkpoint(os, m, bpe, meta);
}

template <class T>
Checkpoint<T> load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  return load_checkpoint<T>(is);
}

}  // namespace patchlens::model
