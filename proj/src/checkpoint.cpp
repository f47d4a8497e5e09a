#include "xpl/checkpoint.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "xpl/text_io.hpp"

namespace xpl {

namespace {

std::string expect(std::istream& is, const std::string& key) {
  std::string k, v;
  if (!(is >> k >> v) || k != key) throw std::runtime_error("checkpoint: expected '" + key + "'");
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Model& m) {
  os << "xpl-checkpoint 1\n";
  os << "model " << tag_char(m.tag) << '\n';
  os << "hidden ";
  for (std::size_t i = 0; i < m.spec.hidden_widths.size(); ++i) os << (i ? "," : "") << m.spec.hidden_widths[i];
  if (m.spec.hidden_widths.empty()) os << '-';
  os << "\nembed_dim " << m.spec.embed_dim << "\ninit_seed " << m.spec.init_seed << "\nvisual_dim "
     << m.spec.visual_dim << "\naudio_dim " << m.spec.audio_dim << '\n';
  const auto tensors = m.params.tensors();
  const auto names = m.params.names();
  os << "tensors " << tensors.size() << '\n';
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Tensor& t = *tensors[i];
    os << "tensor " << names[i] << ' ' << t.rank();
    for (auto d : t.shape()) os << ' ' << d;
    os << '\n';
    for (std::size_t j = 0; j < t.size(); ++j) os << (j ? " " : "") << format_exact(t[j]);
    os << '\n';
  }
}

Model read_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "xpl-checkpoint" || version != 1) {
    throw std::runtime_error("checkpoint: bad header");
  }
  Model m;
  m.tag = parse_tag(expect(is, "model"));
  const auto hidden = expect(is, "hidden");
  if (hidden != "-") {
    for (const auto& w : split(hidden, ',')) m.spec.hidden_widths.push_back(static_cast<std::size_t>(parse_int(w)));
  }
  m.spec.embed_dim = static_cast<std::size_t>(parse_int(expect(is, "embed_dim")));
  m.spec.init_seed = static_cast<std::uint64_t>(std::stoull(expect(is, "init_seed")));
  m.spec.visual_dim = static_cast<std::size_t>(parse_int(expect(is, "visual_dim")));
  m.spec.audio_dim = static_cast<std::size_t>(parse_int(expect(is, "audio_dim")));
  // Structure comes from the spec; values and shapes from the file.
  m.params = init_params(m.spec);
  const auto count = static_cast<std::size_t>(parse_int(expect(is, "tensors")));
  auto tensors = m.params.tensors();
  const auto names = m.params.names();
  if (count != tensors.size()) throw std::runtime_error("checkpoint: tensor count does not match backbone");
  for (std::size_t i = 0; i < count; ++i) {
    std::string kw, name;
    std::size_t rank = 0;
    if (!(is >> kw >> name >> rank) || kw != "tensor") throw std::runtime_error("checkpoint: bad tensor header");
    if (name != names[i]) throw std::runtime_error("checkpoint: expected tensor " + names[i] + ", got " + name);
    Shape shape(rank);
    for (auto& d : shape) is >> d;
    if (!is || shape != tensors[i]->shape()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    std::vector<double> vals(shape_size(shape));
    std::string tok;
    for (auto& v : vals) {
      if (!(is >> tok)) throw std::runtime_error("checkpoint: truncated values for " + name);
      v = parse_double(tok);
    }
    *tensors[i] = Tensor(shape, std::move(vals));
  }
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const Model& m) {
  std::ostringstream ss;
  write_checkpoint(ss, m);
  write_file_atomic(path, ss.str());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::istringstream ss(read_file(path));
  return read_checkpoint(ss);
}

}  // namespace xpl
