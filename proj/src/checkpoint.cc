// Copyright 2026 The ectoken Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ectoken/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ectoken/error.h"

namespace ectoken {

static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

namespace {

constexpr char kMagic[5] = {'E', 'C', 'B', 'K', '1'};

template <class T>
void put(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& o, const std::string& s) {
  put<std::uint32_t>(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, const std::string& path) : in_(in), path_(path) {}

  template <class T>
  T get() {
    T v{};
    read(&v, sizeof v);
    return v;
  }

  std::string get_string() {
    auto n = get<std::uint32_t>();
    if (n > (1u << 28)) fail("string length " + std::to_string(n));
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }

  [[noreturn]] void fail(const std::string& what) {
    throw ValidationError("checkpoint " + path_ + ": " + what);
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

void Checkpoint::save(const std::string& path) const {
  if (precision != 32 && precision != 64) throw ValidationError("checkpoint: precision must be 32 or 64");
  std::ofstream o(path, std::ios::binary | std::ios::trunc);
  if (!o) throw ValidationError("checkpoint: cannot write " + path);
  o.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(o, kCheckpointVersion);
  put<std::uint64_t>(o, config_hash);
  put<std::uint64_t>(o, seed);
  put_string(o, config_text);
  put<std::uint32_t>(o, static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    put_string(o, k);
    put_string(o, v);
  }
  put<std::uint32_t>(o, static_cast<std::uint32_t>(blobs.size()));
  for (const Blob& b : blobs) {
    put_string(o, b.name);
    put<std::uint8_t>(o, static_cast<std::uint8_t>(precision / 8));
    put<std::uint32_t>(o, static_cast<std::uint32_t>(b.shape.size()));
    for (std::size_t d : b.shape) put<std::uint64_t>(o, d);
    if (precision == 32) {
      for (double v : b.values) put<float>(o, static_cast<float>(v));
    } else {
      for (double v : b.values) put<double>(o, v);
    }
  }
  if (!o) throw ValidationError("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot open " + path);
  Reader r(in, path);
  char magic[5];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("bad magic (not an ECBK1 file)");
  auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = r.get<std::uint64_t>();
  c.seed = r.get<std::uint64_t>();
  c.config_text = r.get_string();
  auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_string();
    c.metadata[k] = r.get_string();
  }
  auto n_blobs = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_blobs; ++i) {
    Blob b;
    b.name = r.get_string();
    auto width = r.get<std::uint8_t>();
    if (width != 4 && width != 8) r.fail("blob " + b.name + " has value width " + std::to_string(width));
    c.precision = width * 8;
    auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("blob " + b.name + " has rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      b.shape.push_back(r.get<std::uint64_t>());
      n *= b.shape.back();
    }
    if (n > (1ull << 32)) r.fail("blob " + b.name + " is implausibly large");
    b.values.resize(n);
    for (double& v : b.values) v = width == 4 ? static_cast<double>(r.get<float>()) : r.get<double>();
    c.blobs.push_back(std::move(b));
  }
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return c;
}

const Blob& Checkpoint::blob(const std::string& name) const {
  for (const Blob& b : blobs) {
    if (b.name == name) return b;
  }
  throw ValidationError("checkpoint: missing blob '" + name + "'");
}

bool Checkpoint::has_blob(const std::string& name) const {
  return std::any_of(blobs.begin(), blobs.end(), [&](const Blob& b) { return b.name == name; });
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw ValidationError("checkpoint: missing metadata '" + key + "'");
  return it->second;
}

void Checkpoint::add(const std::string& name, const Shape& shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) throw ValidationError("checkpoint: blob " + name + " size mismatch");
  blobs.push_back({name, shape, std::move(values)});
}

void Checkpoint::add_module(const Module& m, const std::string& prefix) {
  for (const NamedTensor& p : m.named_parameters(prefix)) {
    add(p.name, p.tensor.shape(), std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()));
  }
}

void Checkpoint::add_codebook(const Codebook& b, const std::string& p) {
  add(p + "codes", {b.size, b.dim}, b.codes);
  add(p + "ema_cluster_size", {b.size}, b.ema_cluster_size);
  add(p + "ema_embed_sum", {b.size, b.dim}, b.ema_embed_sum);
  add(p + "decay", {1}, {b.decay});
}

void Checkpoint::load_module(const Module& m, const std::string& prefix) const {
  for (const NamedTensor& p : m.named_parameters(prefix)) {
    const Blob& b = blob(p.name);
    if (b.shape != p.tensor.shape()) {
      throw ValidationError("checkpoint: blob " + p.name + " has shape " + shape_string(b.shape) +
                            ", model expects " + shape_string(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    std::copy(b.values.begin(), b.values.end(), t.mutable_data().begin());
  }
}

void Checkpoint::load_codebook(Codebook& book, const std::string& p) const {
  const Blob& codes = blob(p + "codes");
  if (codes.shape != Shape{book.size, book.dim}) {
    throw ValidationError("checkpoint: codebook " + p + " has shape " + shape_string(codes.shape) +
                          ", model expects [" + std::to_string(book.size) + ", " +
                          std::to_string(book.dim) + "]");
  }
  book.codes = codes.values;
  book.ema_cluster_size = blob(p + "ema_cluster_size").values;
  book.ema_embed_sum = blob(p + "ema_embed_sum").values;
  book.decay = blob(p + "decay").values.at(0);
  if (precision == 32) {
    // Re-project codes so unit norm holds to double precision after narrowing.
    for (std::size_t j = 0; j < book.size; ++j) {
      double n = 0;
      for (std::size_t k = 0; k < book.dim; ++k) n += book.codes[j * book.dim + k] * book.codes[j * book.dim + k];
      n = std::sqrt(n);
      if (n > 0) {
        for (std::size_t k = 0; k < book.dim; ++k) book.codes[j * book.dim + k] /= n;
      }
    }
  }
  book.reset_usage();
}

}  // namespace ectoken
