#include "fisherjscc/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fisherjscc/error.hpp"
#include "fisherjscc/format.hpp"

namespace fisherjscc {

namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"run", {"seed", "threads"}},
      {"data", {"kind", "classes", "per_class", "dim", "spread", "radius", "noise", "train_path",
                "test_path", "delimiter", "header", "label_column"}},
      {"model", {"latent_dim", "encoder_hidden", "decoder_hidden", "encoder_activation",
                 "decoder_activation"}},
      {"channel", {"family", "power", "regime", "psnr_db", "psnr_lo", "psnr_hi"}},
      {"train", {"lambda", "noise_samples", "epochs", "batch_size", "learning_rate", "omit_variance",
                 "fisher_mode", "class_samples", "checkpoint_every"}},
      {"experiment", {"kind", "psnr_grid", "family", "trials", "kl_samples", "taylor_psnr",
                      "taylor_samples", "posterior_sample", "posterior_resolution",
                      "posterior_extent", "posterior_psnr"}},
      {"output", {"dir"}},
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

class Reader {
 public:
  Reader(const pt::ptree& tree, std::string origin) : tree_(tree), origin_(std::move(origin)) {}

  // Calls fn(value) if section.key is present; wraps conversion errors.
  template <class Fn>
  void with(const std::string& section, const std::string& key, Fn fn) const {
    const auto sec = tree_.get_child_optional(pt::ptree::path_type(section, '\0'));
    if (!sec) return;
    const auto val = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!val) return;
    try {
      fn(trim(*val));
    } catch (const ConfigError& e) {
      throw ConfigError(origin_ + ": [" + section + "] " + key + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(origin_ + ": [" + section + "] " + key + ": " + e.what());
    }
  }

 private:
  const pt::ptree& tree_;
  std::string origin_;
};

double to_double(const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) throw ConfigError("'" + s + "' is not a number");
  return v;
}

template <class Int>
Int to_int(const std::string& s) {
  Int v{};
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) throw ConfigError("'" + s + "' is not a valid integer");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("'" + s + "' is not true or false");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> to_double_list(const std::string& s) {
  std::vector<double> out;
  for (const std::string& item : split_list(s)) out.push_back(to_double(item));
  return out;
}

std::vector<std::size_t> to_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(s)) out.push_back(to_int<std::size_t>(item));
  return out;
}

char to_delimiter(const std::string& s) {
  if (s == "tab") return '\t';
  if (s == "comma") return ',';
  if (s.size() != 1) throw ConfigError("delimiter must be a single character, 'comma' or 'tab'");
  return s[0];
}

DataKind parse_data_kind(const std::string& s) {
  if (s == "blobs") return DataKind::blobs;
  if (s == "rings") return DataKind::rings;
  if (s == "table") return DataKind::table;
  throw ConfigError("unknown data kind '" + s + "' (blobs, rings, table)");
}

ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "sweep") return ExperimentKind::sweep;
  if (s == "taylor") return ExperimentKind::taylor;
  if (s == "track") return ExperimentKind::track;
  if (s == "posterior") return ExperimentKind::posterior;
  throw ConfigError("unknown experiment kind '" + s + "' (sweep, taylor, track, posterior)");
}

FisherMode parse_fisher_mode(const std::string& s) {
  if (s == "exact") return FisherMode::exact;
  if (s == "sampled") return FisherMode::sampled;
  throw ConfigError("unknown fisher mode '" + s + "' (exact, sampled)");
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::string delimiter_name(char c) {
  if (c == '\t') return "tab";
  if (c == ',') return "comma";
  return std::string(1, c);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

std::string_view data_kind_name(DataKind kind) {
  switch (kind) {
    case DataKind::blobs: return "blobs";
    case DataKind::rings: return "rings";
    case DataKind::table: return "table";
  }
  return "?";
}

std::string_view experiment_kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::sweep: return "sweep";
    case ExperimentKind::taylor: return "taylor";
    case ExperimentKind::track: return "track";
    case ExperimentKind::posterior: return "posterior";
  }
  return "?";
}

BlobsParams RunConfig::blobs() const {
  return BlobsParams{data.classes, data.per_class, data.dim, data.spread, data.radius};
}

RingsParams RunConfig::rings() const { return RingsParams{data.classes, data.per_class, data.noise}; }

void RunConfig::validate() const {
  require(threads >= 0, "[run] threads must be >= 0");
  require(!out.empty(), "[output] dir must not be empty");
  if (data.kind == DataKind::table) {
    require(!data.train_path.empty(), "[data] kind = table needs train_path");
  } else {
    require(data.classes >= 2, "[data] classes must be >= 2");
    require(data.per_class >= 1, "[data] per_class must be >= 1");
    require(data.dim >= 1, "[data] dim must be >= 1");
    require(data.spread >= 0.0 && data.noise >= 0.0, "[data] spread and noise must be >= 0");
  }
  require(model.latent_dim >= 1, "[model] latent_dim must be >= 1");
  for (std::size_t h : model.encoder_hidden) require(h >= 1, "[model] hidden widths must be >= 1");
  for (std::size_t h : model.decoder_hidden) require(h >= 1, "[model] hidden widths must be >= 1");
  require(channel.power > 0.0, "[channel] power must be > 0");
  try {
    channel.regime.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("[channel] ") + e.what());
  }
  require(train.lambda >= 0.0, "[train] lambda must be >= 0");
  require(train.noise_samples >= 1, "[train] noise_samples must be >= 1");
  require(train.batch_size >= 1, "[train] batch_size must be >= 1");
  require(train.learning_rate > 0.0, "[train] learning_rate must be > 0");
  require(train.fisher.class_samples >= 1, "[train] class_samples must be >= 1");
  require(!experiment.psnr_grid.empty(), "[experiment] psnr_grid must not be empty");
  require(experiment.trials >= 1, "[experiment] trials must be >= 1");
  require(experiment.taylor_samples >= 20, "[experiment] taylor_samples must be >= 20");
  require(experiment.posterior_resolution >= 8, "[experiment] posterior_resolution must be >= 8");
  require(experiment.posterior_extent > 0.0, "[experiment] posterior_extent must be > 0");
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  const auto& known = known_keys();
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (body.empty() || it == known.end()) {
      throw ConfigError(origin + ": unknown section or top-level key '" + section + "'");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.contains(key)) {
        throw ConfigError(origin + ": unknown key '" + key + "' in [" + section + "]");
      }
    }
  }

  RunConfig c;
  const Reader r(tree, origin);
  r.with("run", "seed", [&](const std::string& v) { c.seed = to_int<std::uint64_t>(v); });
  r.with("run", "threads", [&](const std::string& v) { c.threads = to_int<int>(v); });
  r.with("output", "dir", [&](const std::string& v) { c.out = v; });

  auto& d = c.data;
  r.with("data", "kind", [&](const std::string& v) { d.kind = parse_data_kind(v); });
  r.with("data", "classes", [&](const std::string& v) { d.classes = to_int<std::size_t>(v); });
  r.with("data", "per_class", [&](const std::string& v) { d.per_class = to_int<std::size_t>(v); });
  r.with("data", "dim", [&](const std::string& v) { d.dim = to_int<std::size_t>(v); });
  r.with("data", "spread", [&](const std::string& v) { d.spread = to_double(v); });
  r.with("data", "radius", [&](const std::string& v) { d.radius = to_double(v); });
  r.with("data", "noise", [&](const std::string& v) { d.noise = to_double(v); });
  r.with("data", "train_path", [&](const std::string& v) { d.train_path = v; });
  r.with("data", "test_path", [&](const std::string& v) { d.test_path = v; });
  r.with("data", "delimiter", [&](const std::string& v) { d.table.delimiter = to_delimiter(v); });
  r.with("data", "header", [&](const std::string& v) { d.table.header = to_bool(v); });
  r.with("data", "label_column", [&](const std::string& v) { d.table.label_column = to_int<int>(v); });

  auto& m = c.model;
  r.with("model", "latent_dim", [&](const std::string& v) { m.latent_dim = to_int<std::size_t>(v); });
  r.with("model", "encoder_hidden", [&](const std::string& v) { m.encoder_hidden = to_size_list(v); });
  r.with("model", "decoder_hidden", [&](const std::string& v) { m.decoder_hidden = to_size_list(v); });
  r.with("model", "encoder_activation", [&](const std::string& v) { m.encoder_activation = ad::parse_activation(v); });
  r.with("model", "decoder_activation", [&](const std::string& v) { m.decoder_activation = ad::parse_activation(v); });

  auto& ch = c.channel;
  std::string regime = "fixed";
  double psnr = 20.0, lo = 10.0, hi = 25.0;
  r.with("channel", "family", [&](const std::string& v) { ch.family = parse_channel_family(v); });
  r.with("channel", "power", [&](const std::string& v) { ch.power = to_double(v); });
  r.with("channel", "regime", [&](const std::string& v) {
    if (v != "fixed" && v != "uniform") throw ConfigError("regime must be fixed or uniform");
    regime = v;
  });
  r.with("channel", "psnr_db", [&](const std::string& v) { psnr = to_double(v); });
  r.with("channel", "psnr_lo", [&](const std::string& v) { lo = to_double(v); });
  r.with("channel", "psnr_hi", [&](const std::string& v) { hi = to_double(v); });
  ch.regime = regime == "fixed" ? PsnrRegime::fixed(psnr) : PsnrRegime::uniform(lo, hi);
  if (regime == "fixed") {
    ch.regime.lo_db = lo;
    ch.regime.hi_db = hi;
  } else {
    ch.regime.fixed_db = psnr;
  }

  auto& t = c.train;
  r.with("train", "lambda", [&](const std::string& v) { t.lambda = to_double(v); });
  r.with("train", "noise_samples", [&](const std::string& v) { t.noise_samples = to_int<std::size_t>(v); });
  r.with("train", "epochs", [&](const std::string& v) { t.epochs = to_int<std::size_t>(v); });
  r.with("train", "batch_size", [&](const std::string& v) { t.batch_size = to_int<std::size_t>(v); });
  r.with("train", "learning_rate", [&](const std::string& v) { t.learning_rate = to_double(v); });
  r.with("train", "omit_variance", [&](const std::string& v) { t.omit_variance = to_bool(v); });
  r.with("train", "fisher_mode", [&](const std::string& v) { t.fisher.mode = parse_fisher_mode(v); });
  r.with("train", "class_samples", [&](const std::string& v) { t.fisher.class_samples = to_int<std::size_t>(v); });
  r.with("train", "checkpoint_every", [&](const std::string& v) { t.checkpoint_every = to_int<std::size_t>(v); });

  auto& e = c.experiment;
  r.with("experiment", "kind", [&](const std::string& v) { e.kind = parse_experiment_kind(v); });
  r.with("experiment", "psnr_grid", [&](const std::string& v) { e.psnr_grid = to_double_list(v); });
  r.with("experiment", "family", [&](const std::string& v) { e.family = parse_channel_family(v); });
  r.with("experiment", "trials", [&](const std::string& v) { e.trials = to_int<std::size_t>(v); });
  r.with("experiment", "kl_samples", [&](const std::string& v) { e.kl_samples = to_int<std::size_t>(v); });
  r.with("experiment", "taylor_psnr", [&](const std::string& v) { e.taylor_psnr = to_double_list(v); });
  r.with("experiment", "taylor_samples", [&](const std::string& v) { e.taylor_samples = to_int<std::size_t>(v); });
  r.with("experiment", "posterior_sample", [&](const std::string& v) { e.posterior_sample = to_int<std::size_t>(v); });
  r.with("experiment", "posterior_resolution", [&](const std::string& v) { e.posterior_resolution = to_int<std::size_t>(v); });
  r.with("experiment", "posterior_extent", [&](const std::string& v) { e.posterior_extent = to_double(v); });
  r.with("experiment", "posterior_psnr", [&](const std::string& v) { e.posterior_psnr = to_double(v); });

  try {
    c.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(origin + ": " + err.what());
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream o;
  const auto& r = c.channel.regime;
  o << "[run]\nseed = " << c.seed << "\nthreads = " << c.threads << "\n\n";
  o << "[data]\nkind = " << data_kind_name(c.data.kind) << "\nclasses = " << c.data.classes
    << "\nper_class = " << c.data.per_class << "\ndim = " << c.data.dim
    << "\nspread = " << format_double(c.data.spread) << "\nradius = " << format_double(c.data.radius)
    << "\nnoise = " << format_double(c.data.noise) << "\ntrain_path = " << c.data.train_path
    << "\ntest_path = " << c.data.test_path << "\ndelimiter = " << delimiter_name(c.data.table.delimiter)
    << "\nheader = " << (c.data.table.header ? "true" : "false")
    << "\nlabel_column = " << c.data.table.label_column << "\n\n";
  o << "[model]\nlatent_dim = " << c.model.latent_dim << "\nencoder_hidden = " << join(c.model.encoder_hidden)
    << "\ndecoder_hidden = " << join(c.model.decoder_hidden)
    << "\nencoder_activation = " << ad::activation_name(c.model.encoder_activation)
    << "\ndecoder_activation = " << ad::activation_name(c.model.decoder_activation) << "\n\n";
  o << "[channel]\nfamily = " << channel_family_name(c.channel.family)
    << "\npower = " << format_double(c.channel.power)
    << "\nregime = " << (r.kind == PsnrRegime::Kind::fixed ? "fixed" : "uniform")
    << "\npsnr_db = " << format_double(r.fixed_db) << "\npsnr_lo = " << format_double(r.lo_db)
    << "\npsnr_hi = " << format_double(r.hi_db) << "\n\n";
  o << "[train]\nlambda = " << format_double(c.train.lambda) << "\nnoise_samples = " << c.train.noise_samples
    << "\nepochs = " << c.train.epochs << "\nbatch_size = " << c.train.batch_size
    << "\nlearning_rate = " << format_double(c.train.learning_rate)
    << "\nomit_variance = " << (c.train.omit_variance ? "true" : "false")
    << "\nfisher_mode = " << (c.train.fisher.mode == FisherMode::exact ? "exact" : "sampled")
    << "\nclass_samples = " << c.train.fisher.class_samples
    << "\ncheckpoint_every = " << c.train.checkpoint_every << "\n\n";
  const auto& e = c.experiment;
  o << "[experiment]\nkind = " << experiment_kind_name(e.kind) << "\npsnr_grid = " << join(e.psnr_grid)
    << "\nfamily = " << channel_family_name(e.family) << "\ntrials = " << e.trials
    << "\nkl_samples = " << e.kl_samples << "\ntaylor_psnr = " << join(e.taylor_psnr)
    << "\ntaylor_samples = " << e.taylor_samples << "\nposterior_sample = " << e.posterior_sample
    << "\nposterior_resolution = " << e.posterior_resolution
    << "\nposterior_extent = " << format_double(e.posterior_extent)
    << "\nposterior_psnr = " << format_double(e.posterior_psnr) << "\n\n";
  o << "[output]\ndir = " << c.out << "\n";
  return o.str();
}

nlohmann::ordered_json to_json(const RunConfig& config) {
  // Same keys and value spellings as the INI form.
  pt::ptree tree;
  std::istringstream in(to_ini(config));
  pt::read_ini(in, tree);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [section, body] : tree) {
    auto& sec = j[section];
    sec = nlohmann::ordered_json::object();
    for (const auto& [key, value] : body) sec[key] = value.get_value<std::string>();
  }
  return j;
}

EncoderConfig encoder_config(const RunConfig& c, std::size_t input_dim) {
  return EncoderConfig{input_dim, c.model.encoder_hidden, c.model.latent_dim, c.channel.power,
                       c.model.encoder_activation};
}

DecoderConfig decoder_config(const RunConfig& c, std::size_t classes) {
  return DecoderConfig{c.model.latent_dim, c.model.decoder_hidden, classes, c.model.decoder_activation};
}

TrainConfig train_config(const RunConfig& c, std::uint64_t seed) {
  TrainConfig t;
  t.lambda = c.train.lambda;
  t.noise_samples = c.train.noise_samples;
  t.epochs = c.train.epochs;
  t.batch_size = c.train.batch_size;
  t.learning_rate = c.train.learning_rate;
  t.seed = seed;
  t.regime = c.channel.regime;
  t.family = c.channel.family;
  t.omit_variance = c.train.omit_variance;
  t.fisher = c.train.fisher;
  return t;
}

std::vector<FieldDiff> architecture_diff(const RunConfig& c, const ModelPair& models) {
  std::vector<FieldDiff> out;
  auto check = [&](std::string field, std::string expected, std::string actual) {
    if (expected != actual) out.push_back({std::move(field), std::move(expected), std::move(actual)});
  };
  const auto& enc = models.encoder.config();
  const auto& dec = models.decoder.config();
  check("model.latent_dim", std::to_string(c.model.latent_dim), std::to_string(enc.latent_dim));
  check("model.encoder_hidden", join(c.model.encoder_hidden), join(enc.hidden));
  check("model.decoder_hidden", join(c.model.decoder_hidden), join(dec.hidden));
  check("model.encoder_activation", std::string(ad::activation_name(c.model.encoder_activation)),
        std::string(ad::activation_name(enc.activation)));
  check("model.decoder_activation", std::string(ad::activation_name(c.model.decoder_activation)),
        std::string(ad::activation_name(dec.activation)));
  check("channel.power", format_double(c.channel.power), format_double(enc.power));
  return out;
}

}  // namespace fisherjscc
