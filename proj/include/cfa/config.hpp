#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cfa/data.hpp"
#include "cfa/trainer.hpp"

namespace cfa {

/// Resolved `key = value` settings for one command. Only known keys are
/// accepted; every key has a default so the resolved set is always complete.
class RunConfig {
 public:
  RunConfig();

  /// Parses `key = value` lines; '#' starts a comment. Unknown keys and
  /// malformed lines raise ParseError.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

  static bool known(const std::string& key);
  std::string to_text() const;

  TrainConfig train_config() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Images named by the config: either a directory of files or a deterministic
/// synthetic set. Returns (ids, images) in sorted id order.
struct ImageSet {
  std::vector<std::string> ids;
  std::vector<RgbImage> images;

  std::vector<RgbImage> select(const std::vector<std::string>& wanted) const;
};

ImageSet load_image_set(const RunConfig& config);

}  // namespace cfa
