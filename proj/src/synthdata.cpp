#include "xpl/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "xpl/text_io.hpp"

namespace xpl {

namespace {

std::mt19937_64 stream_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  for (auto k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kPartitionStream = 0x5041525449544e;  // "PARTITN"
constexpr std::uint64_t kAugmentStream = 0x4155474d454e54;    // "AUGMENT"

std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct Projections {
  std::vector<double> visual;  // visual_dim x latent_dim
  std::vector<double> audio;   // audio_dim x latent_dim
  std::map<int, std::vector<double>> signatures;
};

std::vector<double> project(const std::vector<double>& w, const std::vector<double>& z, std::size_t out_dim) {
  const auto k = z.size();
  std::vector<double> y(out_dim, 0.0);
  for (std::size_t i = 0; i < out_dim; ++i)
    for (std::size_t j = 0; j < k; ++j) y[i] += w[i * k + j] * z[j];
  return y;
}

// rows x cols matrix with orthonormal columns scaled by sqrt(rows), row-major.
// Every unit-norm signature then projects to norm sqrt(rows): one unit of
// signal per channel for every category.
std::vector<double> random_projection(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd g(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) g(i, j) = unit(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const double scale = std::sqrt(static_cast<double>(rows));
  std::vector<double> w(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) w[i * cols + j] = scale * q(i, j);
  return w;
}

}  // namespace

void GenConfig::validate() const {
  if (height == 0 || width == 0 || visual_dim == 0 || audio_dim == 0 || latent_dim == 0) {
    throw std::invalid_argument("gen config: dimensions must be positive");
  }
  if (latent_dim > visual_dim || latent_dim > audio_dim) {
    throw std::invalid_argument("gen config: latent_dim exceeds a feature dimension");
  }
  if (min_object == 0 || min_object > max_object) throw std::invalid_argument("gen config: bad object size range");
  if (max_object > height || max_object > width) throw std::invalid_argument("gen config: object larger than grid");
  if (min_object * min_object >= height * width) {
    throw std::invalid_argument("gen config: object would cover the whole grid");
  }
  if (n_categories < 2) throw std::invalid_argument("gen config: need at least 2 categories");
  if (n_openset_categories >= n_categories) {
    throw std::invalid_argument("gen config: open-set categories must leave training categories");
  }
  if (n_openset > 0 && n_openset_categories == 0) {
    throw std::invalid_argument("gen config: open-set samples need held-out categories");
  }
  if (n_labeled == 0 || n_test == 0) throw std::invalid_argument("gen config: labeled and test splits need samples");
  if (noise_std < 0.0) throw std::invalid_argument("gen config: negative noise");
}

std::map<std::string, std::string> GenConfig::to_kv() const {
  return {
      {"height", std::to_string(height)},
      {"width", std::to_string(width)},
      {"visual_dim", std::to_string(visual_dim)},
      {"audio_dim", std::to_string(audio_dim)},
      {"latent_dim", std::to_string(latent_dim)},
      {"n_categories", std::to_string(n_categories)},
      {"n_openset_categories", std::to_string(n_openset_categories)},
      {"n_labeled", std::to_string(n_labeled)},
      {"n_unlabeled", std::to_string(n_unlabeled)},
      {"n_test", std::to_string(n_test)},
      {"n_openset", std::to_string(n_openset)},
      {"min_object", std::to_string(min_object)},
      {"max_object", std::to_string(max_object)},
      {"n_distractors", std::to_string(n_distractors)},
      {"noise_std", format_exact(noise_std)},
      {"seed", std::to_string(seed)},
  };
}

void GenConfig::apply_kv(const std::map<std::string, std::string>& kv) {
  auto size_key = [&](const char* key, std::size_t& dst) {
    if (auto it = kv.find(key); it != kv.end()) {
      const auto v = parse_int(it->second);
      if (v < 0) throw std::invalid_argument(std::string(key) + " must be non-negative");
      dst = static_cast<std::size_t>(v);
    }
  };
  size_key("height", height);
  size_key("width", width);
  size_key("visual_dim", visual_dim);
  size_key("audio_dim", audio_dim);
  size_key("latent_dim", latent_dim);
  size_key("n_categories", n_categories);
  size_key("n_openset_categories", n_openset_categories);
  size_key("n_labeled", n_labeled);
  size_key("n_unlabeled", n_unlabeled);
  size_key("n_test", n_test);
  size_key("n_openset", n_openset);
  size_key("min_object", min_object);
  size_key("max_object", max_object);
  size_key("n_distractors", n_distractors);
  if (auto it = kv.find("noise_std"); it != kv.end()) noise_std = parse_double(it->second);
  if (auto it = kv.find("seed"); it != kv.end()) seed = static_cast<std::uint64_t>(parse_int(it->second));
}

CategoryPartition split_openset(const GenConfig& cfg) {
  if (cfg.n_categories < 2) throw std::invalid_argument("split_openset: need at least 2 categories");
  if (cfg.n_openset_categories >= cfg.n_categories) {
    throw std::invalid_argument("split_openset: too many held-out categories");
  }
  std::vector<int> ids(cfg.n_categories);
  std::iota(ids.begin(), ids.end(), 0);
  auto rng = stream_rng({cfg.seed, kPartitionStream});
  std::shuffle(ids.begin(), ids.end(), rng);
  CategoryPartition part;
  const auto n_train = cfg.n_categories - cfg.n_openset_categories;
  part.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  part.openset.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(part.train.begin(), part.train.end());
  std::sort(part.openset.begin(), part.openset.end());
  return part;
}

Dataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  const auto part = split_openset(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  Projections proj;
  proj.visual = random_projection(rng, cfg.visual_dim, cfg.latent_dim);
  proj.audio = random_projection(rng, cfg.audio_dim, cfg.latent_dim);
  // signatures uniform on the unit sphere, so categories differ in direction only
  for (std::size_t c = 0; c < cfg.n_categories; ++c) {
    std::vector<double> z(cfg.latent_dim);
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (auto& v : z) {
        v = unit(rng);
        norm += v * v;
      }
    }
    for (auto& v : z) v /= std::sqrt(norm);
    proj.signatures[static_cast<int>(c)] = std::move(z);
  }

  Dataset ds;
  ds.config = cfg;
  std::int64_t next_id = 0;
  const auto cells = cfg.height * cfg.width;

  auto make_sample = [&](Split split, const std::vector<int>& categories) {
    AVPair p;
    p.sample_id = next_id++;
    p.split = split;
    p.height = cfg.height;
    p.width = cfg.width;
    p.category = categories[uniform_index(rng, 0, categories.size() - 1)];
    const auto& z = proj.signatures.at(p.category);

    std::size_t oh = 0, ow = 0;
    do {
      oh = uniform_index(rng, cfg.min_object, cfg.max_object);
      ow = uniform_index(rng, cfg.min_object, cfg.max_object);
    } while (oh * ow >= cells);  // background must stay nonempty
    const auto top = uniform_index(rng, 0, cfg.height - oh);
    const auto left = uniform_index(rng, 0, cfg.width - ow);

    std::vector<double> mask(cells, 0.0);
    std::vector<int> owner(cells, -1);
    for (std::size_t r = top; r < top + oh; ++r) {
      for (std::size_t c = left; c < left + ow; ++c) {
        mask[r * cfg.width + c] = 1.0;
        owner[r * cfg.width + c] = p.category;
      }
    }

    // Silent objects of other categories; a placement that would overlap an
    // occupied cell is redrawn, and given up on after a bounded number of tries.
    for (std::size_t d = 0; d < cfg.n_distractors && categories.size() > 1; ++d) {
      int cat = p.category;
      while (cat == p.category) cat = categories[uniform_index(rng, 0, categories.size() - 1)];
      for (int attempt = 0; attempt < 32; ++attempt) {
        const auto dh = uniform_index(rng, cfg.min_object, cfg.max_object);
        const auto dw = uniform_index(rng, cfg.min_object, cfg.max_object);
        const auto dt = uniform_index(rng, 0, cfg.height - dh);
        const auto dl = uniform_index(rng, 0, cfg.width - dw);
        bool free = true;
        for (std::size_t r = dt; r < dt + dh && free; ++r)
          for (std::size_t c = dl; c < dl + dw && free; ++c) free = owner[r * cfg.width + c] < 0;
        if (!free) continue;
        for (std::size_t r = dt; r < dt + dh; ++r)
          for (std::size_t c = dl; c < dl + dw; ++c) owner[r * cfg.width + c] = cat;
        break;
      }
    }

    std::map<int, std::vector<double>> vsigs;
    for (int o : owner)
      if (o >= 0 && !vsigs.count(o)) vsigs[o] = project(proj.visual, proj.signatures.at(o), cfg.visual_dim);
    std::vector<double> grid(cells * cfg.visual_dim);
    for (std::size_t cell = 0; cell < cells; ++cell) {
      for (std::size_t ch = 0; ch < cfg.visual_dim; ++ch) {
        const double signal = owner[cell] >= 0 ? vsigs[owner[cell]][ch] : 0.0;
        grid[cell * cfg.visual_dim + ch] = signal + cfg.noise_std * unit(rng);
      }
    }
    auto audio = project(proj.audio, z, cfg.audio_dim);
    for (auto& v : audio) v += cfg.noise_std * unit(rng);

    p.visual = Tensor::matrix(cells, cfg.visual_dim, std::move(grid));
    p.audio = Tensor::vector(std::move(audio));
    if (split != Split::Unlabeled) p.gt_mask = Tensor::vector(std::move(mask));
    ds.samples.push_back(std::move(p));
  };

  for (std::size_t i = 0; i < cfg.n_labeled; ++i) make_sample(Split::Labeled, part.train);
  for (std::size_t i = 0; i < cfg.n_unlabeled; ++i) make_sample(Split::Unlabeled, part.train);
  for (std::size_t i = 0; i < cfg.n_test; ++i) make_sample(Split::Test, part.train);
  for (std::size_t i = 0; i < cfg.n_openset; ++i) make_sample(Split::OpensetTest, part.openset);
  return ds;
}

std::vector<const AVPair*> Dataset::split(Split s) const {
  std::vector<const AVPair*> out;
  for (const auto& p : samples)
    if (p.split == s) out.push_back(&p);
  return out;
}

std::size_t Dataset::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [s](const AVPair& p) { return p.split == s; }));
}

const AVPair& Dataset::by_id(std::int64_t id) const {
  if (id >= 0 && static_cast<std::size_t>(id) < samples.size() && samples[id].sample_id == id) return samples[id];
  for (const auto& p : samples)
    if (p.sample_id == id) return p;
  throw std::out_of_range("dataset: no sample " + std::to_string(id));
}

// Line-oriented format:
//   xpl-dataset 1
//   config <key>=<value> ...        (sorted keys)
//   samples <n>
//   sample <id> <split> <category> <H> <W> <C_v> <C_a> <has_mask>
//   visual <H*W*C_v values>
//   audio <C_a values>
//   mask <H*W digits>                (only when has_mask = 1)
// Reals use the shortest round-trip decimal form.
void Dataset::write(std::ostream& os) const {
  os << "xpl-dataset 1\nconfig";
  for (const auto& [k, v] : config.to_kv()) os << ' ' << k << '=' << v;
  os << "\nsamples " << samples.size() << '\n';
  for (const auto& p : samples) {
    os << "sample " << p.sample_id << ' ' << split_name(p.split) << ' ' << p.category << ' ' << p.height << ' '
       << p.width << ' ' << p.visual.cols() << ' ' << p.audio.size() << ' ' << (p.gt_mask ? 1 : 0) << "\nvisual";
    for (double v : p.visual.values()) os << ' ' << format_exact(v);
    os << "\naudio";
    for (double v : p.audio.values()) os << ' ' << format_exact(v);
    os << '\n';
    if (p.gt_mask) {
      os << "mask ";
      for (double v : p.gt_mask->values()) os << (v > 0.0 ? '1' : '0');
      os << '\n';
    }
  }
}

std::string Dataset::serialize() const {
  std::ostringstream ss;
  write(ss);
  return ss.str();
}

namespace {

std::vector<std::string> expect_line(std::istream& is, const char* head) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(std::string("dataset: missing '") + head + "' line");
  auto fields = split(line, ' ');
  if (fields.empty() || fields[0] != head) {
    throw std::runtime_error(std::string("dataset: expected '") + head + "' line");
  }
  fields.erase(fields.begin());
  return fields;
}

std::vector<double> parse_reals(const std::vector<std::string>& fields, std::size_t n, const char* what) {
  if (fields.size() != n) throw std::runtime_error(std::string("dataset: wrong ") + what + " length");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = parse_double(fields[i]);
  return out;
}

}  // namespace

Dataset Dataset::read(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "xpl-dataset 1") throw std::runtime_error("dataset: bad header");
  Dataset ds;
  std::map<std::string, std::string> kv;
  for (const auto& tok : expect_line(is, "config")) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::runtime_error("dataset: bad config token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  ds.config.apply_kv(kv);
  const auto header = expect_line(is, "samples");
  if (header.size() != 1) throw std::runtime_error("dataset: bad samples line");
  const auto n = static_cast<std::size_t>(parse_int(header[0]));
  ds.samples.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto f = expect_line(is, "sample");
    if (f.size() != 8) throw std::runtime_error("dataset: bad sample line");
    AVPair p;
    p.sample_id = parse_int(f[0]);
    p.split = parse_split(f[1]);
    p.category = static_cast<int>(parse_int(f[2]));
    p.height = static_cast<std::size_t>(parse_int(f[3]));
    p.width = static_cast<std::size_t>(parse_int(f[4]));
    const auto cv = static_cast<std::size_t>(parse_int(f[5]));
    const auto ca = static_cast<std::size_t>(parse_int(f[6]));
    const bool has_mask = f[7] == "1";
    const auto cells = p.height * p.width;
    p.visual = Tensor::matrix(cells, cv, parse_reals(expect_line(is, "visual"), cells * cv, "visual"));
    p.audio = Tensor::vector(parse_reals(expect_line(is, "audio"), ca, "audio"));
    if (has_mask) {
      const auto m = expect_line(is, "mask");
      if (m.size() != 1 || m[0].size() != cells) throw std::runtime_error("dataset: bad mask line");
      std::vector<double> mask(cells);
      for (std::size_t i = 0; i < cells; ++i) {
        if (m[0][i] != '0' && m[0][i] != '1') throw std::runtime_error("dataset: mask must be binary");
        mask[i] = m[0][i] == '1' ? 1.0 : 0.0;
      }
      p.gt_mask = Tensor::vector(std::move(mask));
    }
    if (p.gt_mask.has_value() == (p.split == Split::Unlabeled)) {
      throw std::runtime_error("dataset: mask presence does not match split for sample " + f[0]);
    }
    ds.samples.push_back(std::move(p));
  }
  return ds;
}

namespace {

std::mt19937_64 augment_rng(std::int64_t sample_id, std::uint64_t pipeline_seed, std::uint64_t step) {
  return stream_rng({kAugmentStream, static_cast<std::uint64_t>(sample_id), pipeline_seed, step});
}

AugmentDraw draw_jitter(std::mt19937_64& rng, std::size_t channels, const AugmentConfig& aug) {
  std::uniform_real_distribution<double> scale(aug.scale_lo, aug.scale_hi);
  std::uniform_real_distribution<double> shift(aug.shift_lo, aug.shift_hi);
  AugmentDraw d;
  d.scale.resize(channels);
  d.shift.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    d.scale[c] = scale(rng);
    d.shift[c] = shift(rng);
  }
  return d;
}

}  // namespace

AugmentDraw augment_draw(std::int64_t sample_id, std::size_t channels, std::uint64_t pipeline_seed,
                         std::uint64_t step, const AugmentConfig& aug) {
  auto rng = augment_rng(sample_id, pipeline_seed, step);
  return draw_jitter(rng, channels, aug);
}

AVPair augment(const AVPair& pair, std::uint64_t pipeline_seed, std::uint64_t step, const AugmentConfig& aug) {
  auto rng = augment_rng(pair.sample_id, pipeline_seed, step);
  const auto channels = pair.visual.cols();
  const auto jitter = draw_jitter(rng, channels, aug);
  std::normal_distribution<double> noise(0.0, aug.noise_std);
  std::vector<double> grid(pair.visual.data());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto c = i % channels;
    grid[i] = jitter.scale[c] * grid[i] + jitter.shift[c] + (aug.noise_std > 0.0 ? noise(rng) : 0.0);
  }
  AVPair out = pair;
  out.visual = Tensor(pair.visual.shape(), std::move(grid));
  return out;
}

}  // namespace xpl
