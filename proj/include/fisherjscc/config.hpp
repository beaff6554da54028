#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fisherjscc/channel.hpp"
#include "fisherjscc/data.hpp"
#include "fisherjscc/models.hpp"
#include "fisherjscc/train.hpp"

namespace fisherjscc {

enum class DataKind { blobs, rings, table };
enum class ExperimentKind { sweep, taylor, track, posterior };

struct DataSection {
  DataKind kind = DataKind::rings;
  std::size_t classes = 3;
  std::size_t per_class = 200;
  std::size_t dim = 2;      // blobs only
  double spread = 0.5;      // blobs only
  double radius = 3.0;      // blobs only
  double noise = 0.05;      // rings only
  // Table input; also used for synthetic kinds when set (files written by gen-data).
  std::string train_path;
  std::string test_path;
  TableOptions table;
};

struct ModelSection {
  std::vector<std::size_t> encoder_hidden = {64, 64};
  std::vector<std::size_t> decoder_hidden = {64};
  std::size_t latent_dim = 8;
  ad::Activation encoder_activation = ad::Activation::relu;
  ad::Activation decoder_activation = ad::Activation::relu;
};

struct ChannelSection {
  ChannelFamily family = ChannelFamily::awgn;
  double power = 1.0;
  PsnrRegime regime = PsnrRegime::fixed(20.0);
};

struct TrainSection {
  double lambda = 0.0;
  std::size_t noise_samples = 4;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  bool omit_variance = false;
  FisherOptions fisher;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
};

struct ExperimentSection {
  ExperimentKind kind = ExperimentKind::sweep;
  std::vector<double> psnr_grid = {0, 5, 10, 15, 20, 25};
  ChannelFamily family = ChannelFamily::awgn;
  std::size_t trials = 20;
  std::size_t kl_samples = 20;
  std::vector<double> taylor_psnr = {25, 20, 15, 10};
  std::size_t taylor_samples = 20;
  std::size_t posterior_sample = 0;
  std::size_t posterior_resolution = 41;
  double posterior_extent = 3.0;
  double posterior_psnr = 15.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out = "out";
  DataSection data;
  ModelSection model;
  ChannelSection channel;
  TrainSection train;
  ExperimentSection experiment;

  void validate() const;
  BlobsParams blobs() const;
  RingsParams rings() const;
};

/// Parses an INI document with sections run, data, model, channel, train,
/// experiment and output. Every key is optional; unknown sections or keys and
/// malformed values throw ConfigError before anything else happens.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Fully resolved config with every key written out; parsing it back gives the same config.
std::string to_ini(const RunConfig& config);
nlohmann::ordered_json to_json(const RunConfig& config);

std::string_view data_kind_name(DataKind kind);
std::string_view experiment_kind_name(ExperimentKind kind);

EncoderConfig encoder_config(const RunConfig& config, std::size_t input_dim);
DecoderConfig decoder_config(const RunConfig& config, std::size_t classes);
TrainConfig train_config(const RunConfig& config, std::uint64_t seed);

struct FieldDiff {
  std::string field;
  std::string expected;  // from the config
  std::string actual;    // from the checkpoint
};

/// Architecture fields of a checkpoint that disagree with the config.
std::vector<FieldDiff> architecture_diff(const RunConfig& config, const ModelPair& models);

}  // namespace fisherjscc
