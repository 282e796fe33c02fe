#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dapr/nn/layers.h"
#include "dapr/nn/ops.h"
#include "dapr/nn/param_vector.h"
#include "dapr/nn/tape.h"

// GRU-VAE content popularity model. Each slot's request vector is embedded
// with location, time and context, passed through a VAE, and the
// reconstructions are rolled up by a recurrent cell whose final state feeds a
// softmax over the catalog.
namespace dapr::predictor {

enum class RecurrentCell { kGru, kRnn, kLstm };

// What the recurrent cell consumes at each step.
enum class RecurrentInput { kReconstruction, kLatent };

struct PredictorConfig {
  std::size_t catalog_size = 0;
  std::size_t num_locations = 1;
  std::size_t num_time_buckets = 24;
  std::size_t context_dim = 1;
  std::size_t latent_dim = 8;
  std::size_t hidden_dim = 32;  // recurrent state
  std::size_t vae_hidden = 32;  // encoder/decoder hidden layer
  std::size_t location_embed_dim = 4;
  std::size_t time_embed_dim = 4;
  RecurrentCell cell = RecurrentCell::kGru;
  RecurrentInput recurrent_input = RecurrentInput::kReconstruction;

  void validate() const;
  std::size_t input_dim() const;
  std::size_t recurrent_input_dim() const;
  std::size_t state_dim() const;
};

struct FeatureFrame {
  std::vector<double> requests;  // x_t, normalized request counts per catalog item
  std::size_t location = 0;
  std::size_t time_bucket = 0;
  std::vector<double> context;  // empty means zeros
};

struct PopularityForecast {
  std::vector<double> probabilities;
  std::uint64_t slot = 0;
};

// A window of frames and the request distribution of the slot that follows.
struct SequenceSample {
  std::vector<FeatureFrame> frames;
  std::vector<double> target;
};

using Dataset = std::vector<SequenceSample>;
using PredictorParams = nn::ParamVector;

PredictorParams make_params(const PredictorConfig& cfg, std::mt19937_64& rng);
// Layout only, all zeros.
PredictorParams make_zero_params(const PredictorConfig& cfg);

// Embeddings, encoder and decoder. These are frozen while the recurrent part
// trains.
bool is_vae_segment(const nn::Segment& s);

// The model bound to one tape. Every method takes a batch: rows are samples.
class Network {
 public:
  Network(nn::Tape& tape, PredictorParams& params, const PredictorConfig& cfg);
  // Inference only: the tape must never see backward().
  Network(nn::Tape& tape, const PredictorParams& params, const PredictorConfig& cfg);

  nn::Var build_input(std::span<const FeatureFrame* const> frames) const;
  nn::Var requests(std::span<const FeatureFrame* const> frames) const;
  std::pair<nn::Var, nn::Var> encode(nn::Var h) const;
  nn::Var decode(nn::Var z) const;
  nn::Var initial_state(std::size_t batch) const;
  nn::Var step(nn::Var state, nn::Var input) const;
  nn::Var head(nn::Var state) const;

  const PredictorConfig& config() const { return cfg_; }

 private:
  void bind(PredictorParams& params);

  nn::Tape* tape_;
  PredictorConfig cfg_;
  nn::Var loc_table_, time_table_;
  nn::Dense enc_hidden_, enc_mu_, enc_sigma_, dec_hidden_, dec_out_, head_;
  nn::GruCell gru_;
  nn::RnnCell rnn_;
  nn::LstmCell lstm_;
};

// Plain-tensor entry points for single frames.
nn::Tensor build_input(const FeatureFrame& frame, const PredictorParams& params,
                       const PredictorConfig& cfg);
std::pair<nn::Tensor, nn::Tensor> vae_encode(const nn::Tensor& h, const PredictorParams& params,
                                             const PredictorConfig& cfg);
nn::Tensor reparameterize(const nn::Tensor& mu, const nn::Tensor& sigma, const nn::Tensor& eps);
nn::Tensor vae_decode(const nn::Tensor& z, const PredictorParams& params,
                      const PredictorConfig& cfg);
double vae_loss(const nn::Tensor& x, const nn::Tensor& x_hat, const nn::Tensor& mu,
                const nn::Tensor& sigma, double beta_kl);

nn::Var reparameterize(nn::Var mu, nn::Var sigma, const nn::Tensor& eps);
// MSE plus beta times the KL term averaged over batch rows.
nn::Var vae_loss(nn::Var x, nn::Var x_hat, nn::Var mu, nn::Var sigma, double beta_kl);

// A null noise source means eps = 0, i.e. the posterior mean is used.
PopularityForecast predict_popularity(std::span<const FeatureFrame> frames,
                                      const PredictorParams& params, const PredictorConfig& cfg,
                                      std::mt19937_64* noise = nullptr);

struct LossOptions {
  double lambda = 0.5;
  double beta_kl = 1.0;
};

struct LossParts {
  double vae = 0.0;
  double gru = 0.0;
  double total = 0.0;
};

double combine_losses(double vae, double gru, double lambda);

struct JointGraph {
  nn::Var recon;  // reconstruction MSE, averaged over frames
  nn::Var kl;     // KL per sample, averaged over frames
  nn::Var vae;
  nn::Var gru;
  nn::Var total;
};

// Builds lambda * L_VAE + (1 - lambda) * L_GRU for a batch of equal-length
// samples. L_VAE is averaged over the window's frames.
JointGraph joint_loss_graph(const Network& net, std::span<const SequenceSample* const> batch,
                            const LossOptions& opts, std::mt19937_64* noise);

LossParts joint_loss(std::span<const SequenceSample> batch, const PredictorParams& params,
                     const PredictorConfig& cfg, const LossOptions& opts,
                     std::mt19937_64* noise = nullptr);

// Same as joint_loss but accumulates d(total)/d(params) into params.grads().
LossParts joint_loss_with_grad(std::span<const SequenceSample> batch, PredictorParams& params,
                               const PredictorConfig& cfg, const LossOptions& opts,
                               std::mt19937_64* noise = nullptr);

struct TrainSchedule {
  std::size_t vae_epochs = 10;
  std::size_t gru_epochs = 10;
  std::size_t joint_epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double lambda = 0.5;
  double beta_kl = 1.0;
  std::size_t beta_warmup_epochs = 10;
  std::uint64_t seed = 0;
};

enum class Phase { kVae, kRecurrent, kJoint };
const char* to_string(Phase p);

struct EpochLoss {
  Phase phase = Phase::kVae;
  std::size_t epoch = 0;  // 1-based across all phases
  LossParts loss;         // means over the epoch's batches, full beta
};

struct TrainResult {
  PredictorParams params;
  std::vector<EpochLoss> history;
};

// Staged training: VAE alone, then the recurrent part with the VAE frozen,
// then everything jointly. If `init` is empty, parameters are drawn from the
// schedule seed.
TrainResult train_predictor(const Dataset& data, const PredictorConfig& cfg,
                            const TrainSchedule& schedule, const PredictorParams* init = nullptr);

// Smallest sigma the encoder produces over a dataset's frames.
double min_sigma(const Dataset& data, const PredictorParams& params, const PredictorConfig& cfg);

// Sequences of per-slot request frequencies drawn from a Zipf law. With
// rotate_every > 0 the popularity ranking shifts by one item every that many
// slots, so the next slot depends on the recent past.
struct SyntheticSpec {
  std::size_t catalog_size = 20;
  std::size_t samples = 200;
  std::size_t window = 5;
  std::size_t requests_per_slot = 50;
  double zipf_s = 1.0;
  std::size_t rotate_every = 0;
  std::size_t num_time_buckets = 24;
  std::uint64_t seed = 0;
};

Dataset synthetic_zipf_dataset(const SyntheticSpec& spec);
// Item with the highest Zipf weight at a slot.
std::size_t synthetic_top_item(const SyntheticSpec& spec, std::size_t slot);

}  // namespace dapr::predictor
