#pragma once

// Episodic meta-learning trainer and the non-episodic baselines it is
// compared against.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mhal/ema.hpp"
#include "mhal/losses.hpp"
#include "mhal/metrics.hpp"
#include "mhal/nets.hpp"
#include "mhal/optim.hpp"
#include "mhal/synth.hpp"

namespace mhal {

enum class Mode { no_adapt, supervised_only, mt, meta_seg, meta_hal, full };
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);
bool is_episodic(Mode m);
bool uses_hallucinator(Mode m);

template <class T>
using GradList = std::vector<std::vector<T>>;

// Gradient of L_tr(w) + L_te(w - alpha * grad L_tr(w)) at w. First order
// treats the inner step as constant; second order adds -alpha H g_te with the
// Hessian-vector product from central differences of train_grad.
template <class T>
GradList<T> meta_gradient(const GradList<T>& w, const std::function<GradList<T>(const GradList<T>&)>& train_grad,
                          const std::function<GradList<T>(const GradList<T>&)>& test_grad, double alpha,
                          bool second_order, double hvp_eps);

struct TrainerConfig {
  ScheduleConfig schedule;
  int epochs = 150;
  int train_pairs = 16;
  int test_pairs = 8;
  int labeled_batch = 8;
  int unlabeled_batch = 16;
  int augmented = 8;
  double ema_beta = 0.99;
  bool second_order = false;
  double hvp_eps = 1e-3;  // finite-difference step for Hessian-vector products
  double noise_sigma = 0.05;
  double rotation_degrees = 0.0;  // random rotation augmentation of labeled images; 0 disables
  double divergence_threshold = 1e4;
  int checkpoint_every = 10;
  bool evaluate_teacher = false;  // headline model is the student
  std::uint64_t seed = 0;
  Mode mode = Mode::full;
  UNetConfig unet;
  HallucinatorConfig hallucinator;

  void validate() const;
};

// Everything the trainer reads. Target labels are used only by the
// supervised upper bound and by evaluation.
struct TrainData {
  DomainDataset labeled_source;
  DomainDataset target_train;       // raw target appearance
  DomainDataset source_like_train;  // fixed images and the unlabeled pool
  DomainDataset target_val, source_like_val;
  DomainDataset target_test, source_like_test;
};

struct Pair {
  std::int64_t moving;  // row of the labeled source set
  std::int64_t fixed;   // row of the source-like pool
};

struct Episode {
  std::vector<Pair> train_pairs, test_pairs;
  std::vector<std::int64_t> labeled;    // rows of the labeled set
  std::vector<std::int64_t> unlabeled;  // rows of the unlabeled pool
  std::vector<double> rotations;        // radians, one per labeled row
  std::uint64_t noise_seed = 0;
};

struct EpisodeSizes {
  int train_pairs, test_pairs, labeled, unlabeled;
};

// Fixed images are drawn without replacement so the two pair sets never
// share one; moving images and labeled rows fall back to sampling with
// replacement when the labeled set is smaller than the request.
Episode sample_episode(std::int64_t labeled_count, std::int64_t pool_count, const std::vector<std::int64_t>& unlabeled,
                       const EpisodeSizes& sizes, double max_rotation, std::uint64_t seed);

struct Counters {
  std::int64_t seg_terms = 0;
  std::int64_t trans_terms = 0;
  std::int64_t con_terms = 0;
  std::int64_t transforms = 0;  // hallucinator transforms constructed
  std::int64_t target_terms = 0;  // losses that read target-side images
  std::int64_t steps = 0;
};

struct StepLosses {
  double seg = 0, trans = 0, con = 0, total = 0;
};

struct EpochLog {
  int epoch = 0;
  double seg = 0, trans = 0, con = 0;
  double lambda_con = 0, lambda_trans = 0, lr = 0;
  double val_dice = 0;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainerState {
  ParamSet<float> student;
  ParamSet<float> hallucinator;
  TeacherState<float> teacher;
  Adam<float> adam_student, adam_hal;
  int epoch = 0;  // completed epochs
  Counters counters;
  std::vector<EpochLog> log;
};

class Trainer {
 public:
  Trainer(TrainerConfig cfg, const TrainData& data);

  const TrainerConfig& config() const { return cfg_; }
  const UNet<float>& net() const { return net_; }
  const Hallucinator<float>& hallucinator() const { return hal_; }
  TrainerState& state() { return st_; }
  const TrainerState& state() const { return st_; }

  // Episode for (epoch, step); a pure function of the seed.
  Episode episode(int epoch, int step) const;
  int steps_per_epoch() const;

  // Individual objectives on an episode, recorded on the active tape.
  StepLosses meta_train_loss(const ParamSet<float>& theta, const ParamSet<float>& psi, const Episode& ep,
                             double lambda_trans, Tensor<float>* out);
  StepLosses meta_test_loss(const ParamSet<float>& theta, const ParamSet<float>& psi, const Episode& ep,
                            double lambda_trans, double lambda_con, Tensor<float>* out);
  StepLosses supervised_loss(const ParamSet<float>& theta, const Episode& ep, double lambda_con, Tensor<float>* out);

  // One optimizer step (meta or plain, depending on the mode) plus the EMA update.
  StepLosses step(const Episode& ep, double lambda, double lr);
  EpochLog run_epoch(int epoch);

  // Hard predictions of the student (or teacher) on a dataset, batched.
  LabelMap predict(const DomainDataset& ds, bool teacher) const;
  MetricsReport evaluate(const DomainDataset& ds, bool teacher) const;
  // Evaluation sets for the mode: raw target for no_adapt and supervised_only,
  // source-like target otherwise.
  const DomainDataset& val_set() const;
  const DomainDataset& test_set() const;

  // Full run with checkpoints under run_dir; resumes from run_dir/state if present.
  void train(const std::filesystem::path& run_dir, const std::function<void(const EpochLog&)>& on_epoch = {});

  void save_state(const std::filesystem::path& dir) const;
  void load_state(const std::filesystem::path& dir);

 private:
  std::vector<std::vector<float>> grads_of(const ParamSet<float>& a, const ParamSet<float>* b) const;
  Tensor<float> labeled_images(const Episode& ep, LabelMap& labels) const;
  void check_finite(const StepLosses& l, const Episode& ep) const;

  TrainerConfig cfg_;
  const TrainData& data_;
  UNet<float> net_;
  Hallucinator<float> hal_;
  std::vector<std::int64_t> pool_;
  TrainerState st_;
};

LabelMap predict_params(const UNet<float>& net, const ParamSet<float>& params, const DomainDataset& ds);
MetricsReport evaluate_params(const UNet<float>& net, const ParamSet<float>& params, const DomainDataset& ds);

std::string epoch_log_csv_header();
std::string epoch_log_csv_row(const EpochLog& e);

}  // namespace mhal
