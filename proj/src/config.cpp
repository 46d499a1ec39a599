#include "pnr/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "pnr/error.hpp"

namespace pnr {

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSupervised:
      return "supervised";
    case TrainMode::kUnsupervised:
      return "unsupervised";
    case TrainMode::kMultishot:
      return "multishot";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (p != 1 && p != 2) throw ConfigError("p must be 1 or 2");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("beta1/beta2 must lie in [0, 1)");
  }
  if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0 || lambda4 < 0.0) {
    throw ConfigError("loss weights must be >= 0");
  }
  if (mode == TrainMode::kUnsupervised && lambda3 != 0.0) {
    throw ConfigError("unsupervised mode requires lambda3 = 0");
  }
  if (d < 1 || feat_dim < 1 || hidden < 1) throw ConfigError("dims must be >= 1");
  if (layers < 2) throw ConfigError("layers must be >= 2");
  if (irls_iters < 1) throw ConfigError("irls_iters must be >= 1");
  if (!(irls_eps > 0.0)) throw ConfigError("irls_eps must be > 0");
  if (ridge < 0.0) throw ConfigError("ridge must be >= 0");
  if (identities < 1 || samples_per_id < 1) throw ConfigError("dataset counts must be >= 1");
  if (multishot_m < 1) throw ConfigError("multishot_m must be >= 1");
  if (mode == TrainMode::kMultishot && samples_per_id < multishot_m + 1) {
    throw ConfigError("multishot training needs samples_per_id > multishot_m");
  }
  if (keep_prob < 0.0 || keep_prob > 1.0) throw ConfigError("keep_prob must be in [0, 1]");
  if (eval_noise < 0.0) throw ConfigError("eval_noise must be >= 0");
}

PnrConfig TrainConfig::pnr() const {
  PnrConfig cfg;
  cfg.p = p;
  cfg.irls_iters = irls_iters;
  cfg.irls_eps = irls_eps;
  cfg.ridge = ridge;
  cfg.d = d;
  cfg.feat_dim = feat_dim;
  return cfg;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": '" + value + "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  double v = parse_double(key, value);
  if (v != std::floor(v)) throw ConfigError(key + " must be an integer, got " + value);
  return static_cast<int>(v);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  bool lambda3_set = false;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
    }

    if (key == "mode") {
      if (value == "supervised") {
        cfg.mode = TrainMode::kSupervised;
      } else if (value == "unsupervised") {
        cfg.mode = TrainMode::kUnsupervised;
      } else if (value == "multishot") {
        cfg.mode = TrainMode::kMultishot;
      } else {
        throw ConfigError("unknown mode '" + value + "'");
      }
    } else if (key == "p") {
      cfg.p = parse_int(key, value);
    } else if (key == "steps") {
      cfg.steps = parse_int(key, value);
    } else if (key == "batch") {
      cfg.batch = parse_int(key, value);
    } else if (key == "lr") {
      cfg.lr = parse_double(key, value);
    } else if (key == "beta1") {
      cfg.beta1 = parse_double(key, value);
    } else if (key == "beta2") {
      cfg.beta2 = parse_double(key, value);
    } else if (key == "lambda1") {
      cfg.lambda1 = parse_double(key, value);
    } else if (key == "lambda2") {
      cfg.lambda2 = parse_double(key, value);
    } else if (key == "lambda3") {
      cfg.lambda3 = parse_double(key, value);
      lambda3_set = true;
    } else if (key == "lambda4") {
      cfg.lambda4 = parse_double(key, value);
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
    } else if (key == "d") {
      cfg.d = parse_int(key, value);
    } else if (key == "D") {
      cfg.feat_dim = parse_int(key, value);
    } else if (key == "hidden") {
      cfg.hidden = parse_int(key, value);
    } else if (key == "layers") {
      cfg.layers = parse_int(key, value);
    } else if (key == "irls_iters") {
      cfg.irls_iters = parse_int(key, value);
    } else if (key == "irls_eps") {
      cfg.irls_eps = parse_double(key, value);
    } else if (key == "ridge") {
      cfg.ridge = parse_double(key, value);
    } else if (key == "identities") {
      cfg.identities = parse_int(key, value);
    } else if (key == "samples_per_id") {
      cfg.samples_per_id = parse_int(key, value);
    } else if (key == "multishot_m") {
      cfg.multishot_m = parse_int(key, value);
    } else if (key == "keep_prob") {
      cfg.keep_prob = parse_double(key, value);
    } else if (key == "eval_noise") {
      cfg.eval_noise = parse_double(key, value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }

  if (cfg.mode == TrainMode::kUnsupervised && !lambda3_set) cfg.lambda3 = 0.0;
  cfg.validate();
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "mode = " << to_string(cfg.mode) << "\n";
  out << "p = " << cfg.p << "\n";
  out << "steps = " << cfg.steps << "\n";
  out << "batch = " << cfg.batch << "\n";
  out << "lr = " << cfg.lr << "\n";
  out << "beta1 = " << cfg.beta1 << "\n";
  out << "beta2 = " << cfg.beta2 << "\n";
  out << "lambda1 = " << cfg.lambda1 << "\n";
  out << "lambda2 = " << cfg.lambda2 << "\n";
  out << "lambda3 = " << cfg.lambda3 << "\n";
  out << "lambda4 = " << cfg.lambda4 << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "d = " << cfg.d << "\n";
  out << "D = " << cfg.feat_dim << "\n";
  out << "hidden = " << cfg.hidden << "\n";
  out << "layers = " << cfg.layers << "\n";
  out << "irls_iters = " << cfg.irls_iters << "\n";
  out << "irls_eps = " << cfg.irls_eps << "\n";
  out << "ridge = " << cfg.ridge << "\n";
  out << "identities = " << cfg.identities << "\n";
  out << "samples_per_id = " << cfg.samples_per_id << "\n";
  out << "multishot_m = " << cfg.multishot_m << "\n";
  out << "keep_prob = " << cfg.keep_prob << "\n";
  out << "eval_noise = " << cfg.eval_noise << "\n";
  return out.str();
}

}  // namespace pnr
