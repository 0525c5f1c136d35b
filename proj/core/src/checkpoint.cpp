#include "meps/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace meps {

using nlohmann::json;

namespace {

static_assert(sizeof(float) == 4);

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return v;
}

template <typename U>
void put(std::ostream& out, U v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw std::runtime_error("checkpoint truncated while reading " + what);
  return to_little(v);
}

std::string get_bytes(std::istream& in, std::uint64_t n, const std::string& what) {
  if (n > (1ULL << 32)) throw std::runtime_error("checkpoint field too large: " + what);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint truncated while reading " + what);
  return s;
}

}  // namespace

std::size_t Checkpoint::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write("MEPS", 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, ckpt.metadata.size());
    out.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
    put<std::uint64_t>(out, ckpt.tensors.size());
    for (const NamedTensor& t : ckpt.tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
      for (std::size_t d : t.value.shape()) put<std::uint64_t>(out, d);
      for (float v : t.value.data()) put<float>(out, v);
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MEPS", 4) != 0) {
    throw std::runtime_error(path.string() + " is not a MEPS checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = get_bytes(in, get<std::uint64_t>(in, "metadata length"), "metadata");
  const auto count = get<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = get_bytes(in, get<std::uint32_t>(in, "name length"), "tensor name");
    const auto rank = get<std::uint32_t>(in, t.name + " rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get<std::uint64_t>(in, t.name + " dims"));
    std::vector<float> data(shape_numel(shape));
    for (float& v : data) v = get<float>(in, t.name + " values");
    t.value = Tensor<float>(std::move(shape), std::move(data));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

template <typename T>
Checkpoint model_to_checkpoint(const MepsNet<T>& model) {
  Checkpoint ckpt;
  const json meta = {{"kind", "model"}, {"config", json::parse(config_to_json(model.config()))}};
  ckpt.metadata = meta.dump();
  for (const auto& p : model.params()) ckpt.tensors.push_back({p.name, p.value.template cast<float>()});
  return ckpt;
}

template <typename T>
MepsNet<T> model_from_checkpoint(const Checkpoint& ckpt) {
  const json meta = json::parse(ckpt.metadata);
  if (meta.value("kind", "") != "model") throw std::runtime_error("checkpoint does not hold a model");
  MepsNet<T> model(config_from_json(meta.at("config").dump()));
  for (auto& p : model.params()) {
    const NamedTensor* t = ckpt.find(p.name);
    if (!t) throw std::runtime_error("checkpoint is missing parameter " + p.name);
    if (t->value.shape() != p.value.shape()) {
      throw std::runtime_error("checkpoint parameter " + p.name + " has shape " + shape_str(t->value.shape()) +
                               ", model expects " + shape_str(p.value.shape()));
    }
    p.value = t->value.template cast<T>();
  }
  if (ckpt.tensors.size() != model.params().size()) {
    throw std::runtime_error("checkpoint holds tensors the model does not define");
  }
  return model;
}

template Checkpoint model_to_checkpoint<float>(const MepsNet<float>&);
template Checkpoint model_to_checkpoint<double>(const MepsNet<double>&);
template MepsNet<float> model_from_checkpoint<float>(const Checkpoint&);
template MepsNet<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace meps
