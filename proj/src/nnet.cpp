#include "cmo/nnet.hpp"

#include "binary_io.hpp"

#include <array>
#include <fstream>
#include <sstream>

namespace cmo {

namespace {
constexpr std::array<char, 4> kModelMagic{'C', 'M', 'O', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void write_model(std::ostream& out, const Model& model) {
  const ModelSpec& s = model.spec();
  out.write(kModelMagic.data(), kModelMagic.size());
  detail::write_le(out, kModelVersion);
  detail::write_le(out, static_cast<std::uint32_t>(s.architecture));
  detail::write_le(out, static_cast<std::uint32_t>(s.input.width));
  detail::write_le(out, static_cast<std::uint32_t>(s.input.height));
  detail::write_le(out, static_cast<std::uint32_t>(s.input.channels));
  detail::write_le(out, static_cast<std::uint32_t>(s.num_classes));
  detail::write_le(out, static_cast<std::uint32_t>(s.hidden.size()));
  for (int h : s.hidden) detail::write_le(out, static_cast<std::uint32_t>(h));
  detail::write_le(out, static_cast<std::uint64_t>(model.param_count()));
  for (Index i = 0; i < model.param_count(); ++i) detail::write_le(out, model.params()[i]);
}

Model read_model(std::istream& in) {
  std::array<char, 4> magic{};
  detail::read_bytes(in, magic.data(), magic.size(), "magic");
  if (magic != kModelMagic) throw FormatError("not a model checkpoint (bad magic)");
  const auto version = detail::read_le<std::uint32_t>(in, "version");
  if (version != kModelVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  ModelSpec s;
  const auto arch = detail::read_le<std::uint32_t>(in, "architecture");
  if (arch > static_cast<std::uint32_t>(Architecture::tinyconv)) throw FormatError("unknown architecture id");
  s.architecture = static_cast<Architecture>(arch);
  s.input.width = static_cast<int>(detail::read_le<std::uint32_t>(in, "input width"));
  s.input.height = static_cast<int>(detail::read_le<std::uint32_t>(in, "input height"));
  s.input.channels = static_cast<int>(detail::read_le<std::uint32_t>(in, "input channels"));
  s.num_classes = static_cast<int>(detail::read_le<std::uint32_t>(in, "class count"));
  const auto layers = detail::read_le<std::uint32_t>(in, "hidden count");
  if (layers > 64) throw FormatError("implausible hidden layer count");
  for (std::uint32_t i = 0; i < layers; ++i)
    s.hidden.push_back(static_cast<int>(detail::read_le<std::uint32_t>(in, "hidden size")));
  Model model;
  try {
    model = Model(s);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid architecture descriptor: ") + e.what());
  }
  const auto count = detail::read_le<std::uint64_t>(in, "parameter count");
  if (count != static_cast<std::uint64_t>(model.param_count()))
    throw FormatError("parameter count does not match the architecture");
  Model::Vector p(model.param_count());
  for (Index i = 0; i < p.size(); ++i) p[i] = detail::read_le<double>(in, "parameters");
  model.set_params(std::move(p));
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after parameters");
  return model;
}
}  // namespace

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::linear: return "linear";
    case Architecture::mlp: return "mlp";
    case Architecture::tinyconv: return "tinyconv";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "linear") return Architecture::linear;
  if (name == "mlp") return Architecture::mlp;
  if (name == "tinyconv") return Architecture::tinyconv;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_model(out, model);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_model(in);
}

std::string serialize_model(const Model& model) {
  std::ostringstream out(std::ios::binary);
  write_model(out, model);
  return std::move(out).str();
}

Model deserialize_model(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_model(in);
}

}  // namespace cmo
