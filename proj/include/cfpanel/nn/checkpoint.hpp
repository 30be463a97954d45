#pragma once

#include <istream>
#include <json.hpp>
#include <ostream>
#include <string>

#include "cfpanel/errors.hpp"
#include "cfpanel/nn/encoder_decoder.hpp"
#include "cfpanel/nn/rvae.hpp"

namespace cfpanel::nn {

/// Checkpoints are versioned JSON: shapes plus parameters in row-major
/// order. Doubles serialize at max_digits10, so write/read round-trips are
/// lossless at double precision.

namespace detail_ckpt {

inline nlohmann::json params_to_json(const ParamBuffer& buf) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : buf.layout().entries()) {
    nlohmann::json entry;
    entry["name"] = e.name;
    entry["rows"] = e.rows;
    entry["cols"] = e.cols;
    nlohmann::json data = nlohmann::json::array();
    const auto m = buf.mat(e.name);
    for (Index i = 0; i < e.rows; ++i)
      for (Index j = 0; j < e.cols; ++j) data.push_back(m(i, j));
    entry["data"] = std::move(data);
    arr.push_back(std::move(entry));
  }
  return arr;
}

inline void params_from_json(const nlohmann::json& arr, ParamBuffer& buf) {
  for (const auto& entry : arr) {
    const std::string name = entry.at("name").get<std::string>();
    const Index rows = entry.at("rows").get<Index>();
    const Index cols = entry.at("cols").get<Index>();
    const auto& e = buf.layout().at(name);
    if (e.rows != rows || e.cols != cols)
      throw InvalidArgument("checkpoint shape mismatch for " + name);
    const auto& data = entry.at("data");
    if (static_cast<Index>(data.size()) != rows * cols)
      throw InvalidArgument("checkpoint data length mismatch for " + name);
    auto m = buf.mat(name);
    std::size_t k = 0;
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = data[k++].get<double>();
  }
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["learning_rate"] = cfg.learning_rate;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["input_dropout_rate"] = cfg.input_dropout_rate;
  j["l2_coeff"] = cfg.l2_coeff;
  j["validation_fraction"] = cfg.validation_fraction;
  j["seed"] = cfg.seed;
  j["optimizer"] = cfg.optimizer == Optimizer::adam ? "adam" : "sgd";
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.input_dropout_rate = j.at("input_dropout_rate").get<double>();
  cfg.l2_coeff = j.at("l2_coeff").get<double>();
  cfg.validation_fraction = j.at("validation_fraction").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  const std::string opt = j.at("optimizer").get<std::string>();
  if (opt == "adam") cfg.optimizer = Optimizer::adam;
  else if (opt == "sgd") cfg.optimizer = Optimizer::sgd;
  else throw InvalidArgument("unknown optimizer in checkpoint: " + opt);
  return cfg;
}

}  // namespace detail_ckpt

inline void save_checkpoint(const EncoderDecoderNet& net,
                            const TrainConfig& cfg, std::ostream& out) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = "encoder_decoder";
  j["features"] = net.f;
  j["hidden"] = net.h;
  j["config"] = detail_ckpt::config_to_json(cfg);
  j["params"] = detail_ckpt::params_to_json(net.params);
  out << j.dump(1) << '\n';
}

inline std::pair<EncoderDecoderNet, TrainConfig> load_encoder_decoder(
    std::istream& in) {
  nlohmann::json j;
  in >> j;
  if (j.at("kind").get<std::string>() != "encoder_decoder")
    throw InvalidArgument("checkpoint is not an encoder-decoder model");
  EncoderDecoderNet net = EncoderDecoderNet::make(
      j.at("hidden").get<Index>(), j.at("features").get<Index>());
  detail_ckpt::params_from_json(j.at("params"), net.params);
  return {std::move(net), detail_ckpt::config_from_json(j.at("config"))};
}

inline void save_checkpoint(const RvaeNet& net, const TrainConfig& cfg,
                            std::ostream& out) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = "rvae";
  j["features"] = net.f;
  j["enc_hidden"] = net.enc_h;
  j["latent"] = net.latent;
  j["dec2_hidden"] = net.dec2_h;
  j["config"] = detail_ckpt::config_to_json(cfg);
  j["params"] = detail_ckpt::params_to_json(net.params);
  out << j.dump(1) << '\n';
}

inline std::pair<RvaeNet, TrainConfig> load_rvae(std::istream& in) {
  nlohmann::json j;
  in >> j;
  if (j.at("kind").get<std::string>() != "rvae")
    throw InvalidArgument("checkpoint is not an rvae model");
  RvaeNet net = RvaeNet::make(
      j.at("enc_hidden").get<Index>(), j.at("latent").get<Index>(),
      j.at("dec2_hidden").get<Index>(), j.at("features").get<Index>());
  detail_ckpt::params_from_json(j.at("params"), net.params);
  return {std::move(net), detail_ckpt::config_from_json(j.at("config"))};
}

}  // namespace cfpanel::nn
