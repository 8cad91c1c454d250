#include "cfa/config.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cfa/errors.hpp"

namespace cfa {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table = {
      // network
      {"period", "8"},
      {"proposals", "24"},
      {"features", "128"},
      {"normalize_gates", "false"},
      // optimisation
      {"batch_size", "128"},
      {"lr", "0.001"},
      {"iters", "1500000"},
      {"gamma", "2.5e-5"},
      {"reference_iters", "1500000"},
      {"noise_std", "0.01"},
      {"seed", "0"},
      {"validate_every", "1000"},
      {"checkpoint_every", "0"},
      {"fine_tune_iters", "0"},
      {"fine_tune_lr", "0.0001"},
      {"momentum", "0"},
      {"val_patches", "256"},
      {"log_init_scale", "1"},
      {"log_init_radius", "-1"},
      // data
      {"data_dir", ""},
      {"synthetic_images", "0"},
      {"synthetic_size", "128"},
      {"n_test", "56"},
      {"n_val", "51"},
      {"split_seed", "0"},
      // evaluation
      {"noise_levels", "0,0.0025,0.005,0.0075,0.01,0.0125,0.015,0.0175,0.02,0.03,0.04"},
      {"patch_size", "64"},
      {"threads", "1"},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

bool RunConfig::known(const std::string& key) { return defaults().count(key) > 0; }

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
    const auto key = trim(line.substr(0, eq));
    if (!known(key)) throw ParseError("unknown config key '" + key + "'", line_no);
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ContractError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ContractError("config key '" + key + "' expects a number, got '" + v + "'");
}

long long RunConfig::get_int(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw ContractError("config key '" + key + "' expects an integer, got '" + v + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<double> RunConfig::get_list(const std::string& key) const {
  std::vector<double> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ContractError("config key '" + key + "' has a non-numeric entry '" + item + "'");
    }
  }
  return out;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

TrainConfig RunConfig::train_config() const {
  auto non_negative = [&](const std::string& key) {
    const auto v = get_int(key);
    if (v < 0) throw ContractError("config key '" + key + "' must be non-negative");
    return v;
  };
  TrainConfig c;
  c.net.period = static_cast<int>(get_int("period"));
  c.net.proposals = static_cast<int>(get_int("proposals"));
  c.net.features = static_cast<int>(get_int("features"));
  c.net.normalize_gates = get_bool("normalize_gates");
  c.batch_size = static_cast<std::size_t>(non_negative("batch_size"));
  c.lr = get_double("lr");
  c.iters = get_int("iters");
  c.gamma = get_double("gamma");
  c.reference_iters = get_int("reference_iters");
  c.noise_std = get_double("noise_std");
  c.seed = static_cast<std::uint64_t>(non_negative("seed"));
  c.validate_every = get_int("validate_every");
  c.checkpoint_every = get_int("checkpoint_every");
  c.fine_tune_iters = get_int("fine_tune_iters");
  c.fine_tune_lr = get_double("fine_tune_lr");
  c.momentum = get_double("momentum");
  c.val_patches = static_cast<std::size_t>(non_negative("val_patches"));
  c.log_init_scale = get_double("log_init_scale");
  c.log_init_radius = static_cast<int>(get_int("log_init_radius"));
  c.validate();
  return c;
}

std::vector<RgbImage> ImageSet::select(const std::vector<std::string>& wanted) const {
  std::vector<RgbImage> out;
  for (const auto& id : wanted) {
    auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) throw ContractError("image id '" + id + "' is not in the dataset");
    out.push_back(images[static_cast<std::size_t>(it - ids.begin())]);
  }
  return out;
}

ImageSet load_image_set(const RunConfig& config) {
  ImageSet set;
  const auto dir = config.get("data_dir");
  const auto synthetic = config.get_int("synthetic_images");
  if (!dir.empty() && synthetic > 0) throw ContractError("set either data_dir or synthetic_images, not both");
  if (!dir.empty()) {
    set.ids = list_images(dir);
    for (const auto& id : set.ids) set.images.push_back(load_image(std::filesystem::path(dir) / id));
  } else if (synthetic > 0) {
    const auto size = static_cast<std::size_t>(config.get_int("synthetic_size"));
    for (long long i = 0; i < synthetic; ++i) {
      std::ostringstream id;
      id << "synthetic_" << std::setfill('0') << std::setw(4) << i;
      set.ids.push_back(id.str());
      set.images.push_back(synthetic_image(size, size, static_cast<std::uint64_t>(i)));
    }
  } else {
    throw ContractError("no dataset configured: set data_dir or synthetic_images");
  }
  if (set.ids.empty()) throw ContractError("dataset is empty");
  return set;
}

}  // namespace cfa
