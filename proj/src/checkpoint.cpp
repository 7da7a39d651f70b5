#include <bit>
#include <cstring>
#include <fstream>
#include <utility>

#include "rarecast/model.hpp"

namespace rarecast {

static_assert(std::endian::native == std::endian::little, "checkpoint layout assumes little-endian");

namespace {

constexpr char kMagic[4] = {'R', 'C', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("truncated checkpoint");
  return v;
}

}  // namespace

void write_config(std::ostream& out, const ModelConfig& c) {
  for (int v : {c.d, c.layers, c.heads, c.ffn, c.steps, c.features, static_cast<int>(c.pooling)})
    put<std::int32_t>(out, v);
  put(out, c.dropout);
}

ModelConfig read_config(std::istream& in) {
  ModelConfig c;
  c.d = get<std::int32_t>(in);
  c.layers = get<std::int32_t>(in);
  c.heads = get<std::int32_t>(in);
  c.ffn = get<std::int32_t>(in);
  c.steps = get<std::int32_t>(in);
  c.features = get<std::int32_t>(in);
  const auto pooling = get<std::int32_t>(in);
  if (pooling != 0 && pooling != 1) throw ParseError("bad pooling tag in checkpoint");
  c.pooling = static_cast<Pooling>(pooling);
  c.dropout = get<double>(in);
  c.validate();
  return c;
}

void write_params(std::ostream& out, const ModelParams& params) {
  std::uint64_t count = 0;
  params.visit(ModelParams::ConstTensorVisitor(
      [&](std::string_view, std::span<const double>, Eigen::Index, Eigen::Index) { ++count; }));
  put(out, count);
  params.visit(ModelParams::ConstTensorVisitor(
      [&](std::string_view name, std::span<const double> data, Eigen::Index rows, Eigen::Index cols) {
        put(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put(out, static_cast<std::uint64_t>(rows));
        put(out, static_cast<std::uint64_t>(cols));
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
      }));
}

void read_params(std::istream& in, ModelParams& params) {
  std::uint64_t expected = 0;
  std::as_const(params).visit(ModelParams::ConstTensorVisitor(
      [&](std::string_view, std::span<const double>, Eigen::Index, Eigen::Index) { ++expected; }));
  if (get<std::uint64_t>(in) != expected) throw ParseError("checkpoint tensor count mismatch");
  params.visit(ModelParams::TensorVisitor(
      [&](std::string_view name, std::span<double> data, Eigen::Index rows, Eigen::Index cols) {
        const auto len = get<std::uint32_t>(in);
        std::string stored(len, '\0');
        in.read(stored.data(), len);
        if (!in || stored != name) throw ParseError("checkpoint tensor '" + stored + "' where '" +
                                                    std::string(name) + "' expected");
        if (get<std::uint64_t>(in) != static_cast<std::uint64_t>(rows) ||
            get<std::uint64_t>(in) != static_cast<std::uint64_t>(cols))
          throw ParseError("shape mismatch for tensor " + stored);
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw ParseError("truncated tensor " + stored);
      }));
}

void save_params(const ModelParams& params, const ModelConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, 4);
  put(out, kVersion);
  write_config(out, config);
  write_params(out, params);
}

std::pair<ModelParams, ModelConfig> load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not a checkpoint: " + path.string());
  if (get<std::uint32_t>(in) != kVersion) throw ParseError("unsupported checkpoint version");
  ModelConfig config = read_config(in);
  ModelParams params = ModelParams::zeros(config);
  read_params(in, params);
  return {std::move(params), config};
}

}  // namespace rarecast
