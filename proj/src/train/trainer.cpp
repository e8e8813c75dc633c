#include "mhal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace mhal {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::int64_t> iota_rows(std::size_t n, std::int64_t from = 0) {
  std::vector<std::int64_t> v(n);
  std::iota(v.begin(), v.end(), from);
  return v;
}

LabelMap concat_labels(const LabelMap& a, const LabelMap& b) {
  if (a.batch == 0) return b;
  if (b.batch == 0) return a;
  LabelMap out = a;
  out.batch += b.batch;
  out.values.insert(out.values.end(), b.values.begin(), b.values.end());
  return out;
}

LabelMap label_rows(const LabelMap& l, const std::vector<std::int64_t>& rows) {
  LabelMap out(static_cast<std::int64_t>(rows.size()), l.h, l.w);
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy_n(l.values.begin() + rows[k] * l.plane(), l.plane(), out.values.begin() + k * l.plane());
  return out;
}

double value(const Tensor<float>& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; }

// Draws `count` rows from [0, n): a fresh shuffle when count <= n, uniform
// with replacement otherwise.
std::vector<std::int64_t> draw(std::int64_t n, int count, std::mt19937_64& rng) {
  std::vector<std::int64_t> out;
  if (count <= n) {
    auto all = iota_rows(static_cast<std::size_t>(n));
    std::shuffle(all.begin(), all.end(), rng);
    out.assign(all.begin(), all.begin() + count);
  } else {
    std::uniform_int_distribution<std::int64_t> u(0, n - 1);
    for (int i = 0; i < count; ++i) out.push_back(u(rng));
  }
  return out;
}

}  // namespace

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::no_adapt: return "no_adapt";
    case Mode::supervised_only: return "supervised_only";
    case Mode::mt: return "mt";
    case Mode::meta_seg: return "meta_seg";
    case Mode::meta_hal: return "meta_hal";
    case Mode::full: return "full";
  }
  return "unknown";
}

Mode parse_mode(const std::string& s) {
  for (auto m : {Mode::no_adapt, Mode::supervised_only, Mode::mt, Mode::meta_seg, Mode::meta_hal, Mode::full}) {
    if (s == mode_name(m)) return m;
  }
  throw std::invalid_argument("unknown mode '" + s +
                              "' (expected no_adapt, supervised_only, mt, meta_seg, meta_hal or full)");
}

bool is_episodic(Mode m) { return m == Mode::meta_seg || m == Mode::meta_hal || m == Mode::full; }
bool uses_hallucinator(Mode m) { return m == Mode::meta_hal || m == Mode::full; }

void TrainerConfig::validate() const {
  schedule.validate();
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (train_pairs < 1 || test_pairs < 1 || labeled_batch < 1 || unlabeled_batch < 1) {
    throw std::invalid_argument("train: pair counts and batch sizes must be >= 1");
  }
  if (augmented < 0 || augmented > train_pairs) throw std::invalid_argument("train: augmented must lie in [0, train_pairs]");
  if (!(ema_beta >= 0 && ema_beta <= 1)) throw std::invalid_argument("train: ema_beta must lie in [0, 1]");
  if (!(hvp_eps > 0)) throw std::invalid_argument("train: hvp_eps must be > 0");
  if (!(noise_sigma >= 0) || !(rotation_degrees >= 0)) throw std::invalid_argument("train: noise and rotation must be >= 0");
  if (checkpoint_every < 1) throw std::invalid_argument("train: checkpoint_every must be >= 1");
}

Episode sample_episode(std::int64_t labeled_count, std::int64_t pool_count, const std::vector<std::int64_t>& unlabeled,
                       const EpisodeSizes& sizes, double max_rotation, std::uint64_t seed) {
  if (labeled_count < 1) throw std::invalid_argument("sample_episode: no labeled samples");
  if (pool_count < 1) throw std::invalid_argument("sample_episode: no unlabeled target samples");
  const auto pairs = sizes.train_pairs + sizes.test_pairs;
  if (pairs > pool_count) {
    throw std::invalid_argument("sample_episode: " + std::to_string(pairs) + " disjoint pairs need as many target images, pool has " +
                                std::to_string(pool_count));
  }
  std::mt19937_64 rng(seed);
  Episode ep;
  const auto fixed = draw(pool_count, pairs, rng);
  const auto moving = draw(labeled_count, pairs, rng);
  for (int i = 0; i < pairs; ++i) (i < sizes.train_pairs ? ep.train_pairs : ep.test_pairs).push_back({moving[i], fixed[i]});
  ep.labeled = draw(labeled_count, sizes.labeled, rng);
  ep.unlabeled = unlabeled;
  std::uniform_real_distribution<double> rot(-max_rotation, max_rotation);
  for (int i = 0; i < sizes.labeled; ++i) ep.rotations.push_back(max_rotation > 0 ? rot(rng) : 0.0);
  ep.noise_seed = rng();
  return ep;
}

template <class T>
GradList<T> meta_gradient(const GradList<T>& w, const std::function<GradList<T>(const GradList<T>&)>& train_grad,
                          const std::function<GradList<T>(const GradList<T>&)>& test_grad, double alpha,
                          bool second_order, double hvp_eps) {
  auto axpy = [](const GradList<T>& a, double s, const GradList<T>& b) {
    GradList<T> out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += static_cast<T>(s * static_cast<double>(b[i][j]));
    return out;
  };
  auto g_tr = train_grad(w);
  auto g_te = test_grad(axpy(w, -alpha, g_tr));
  if (second_order) {
    // (I - alpha H) g_te, with H g_te from central differences of the meta-train gradient.
    double norm2 = 0;
    for (const auto& v : g_te)
      for (T x : v) norm2 += static_cast<double>(x) * static_cast<double>(x);
    const double eps = hvp_eps / std::max(1.0, std::sqrt(norm2));
    const auto gp = train_grad(axpy(w, eps, g_te));
    const auto gm = train_grad(axpy(w, -eps, g_te));
    for (std::size_t i = 0; i < g_te.size(); ++i)
      for (std::size_t j = 0; j < g_te[i].size(); ++j)
        g_te[i][j] -= static_cast<T>(alpha * (static_cast<double>(gp[i][j]) - static_cast<double>(gm[i][j])) / (2 * eps));
  }
  return axpy(g_tr, 1.0, g_te);
}

template GradList<float> meta_gradient(const GradList<float>&, const std::function<GradList<float>(const GradList<float>&)>&,
                                       const std::function<GradList<float>(const GradList<float>&)>&, double, bool,
                                       double);
template GradList<double> meta_gradient(const GradList<double>&,
                                        const std::function<GradList<double>(const GradList<double>&)>&,
                                        const std::function<GradList<double>(const GradList<double>&)>&, double, bool,
                                        double);

Trainer::Trainer(TrainerConfig cfg, const TrainData& data)
    : cfg_(std::move(cfg)), data_(data), net_(cfg_.unet), hal_(cfg_.hallucinator) {
  cfg_.validate();
  const auto& lab = cfg_.mode == Mode::supervised_only ? data_.target_train : data_.labeled_source;
  if (lab.labeled_indices().size() != static_cast<std::size_t>(lab.size()) || lab.size() == 0) {
    throw std::invalid_argument(std::string("train: the ") +
                                (cfg_.mode == Mode::supervised_only ? "target training" : "labeled source") +
                                " set must be non-empty and fully labeled");
  }
  if (data_.source_like_train.size() == 0) throw std::invalid_argument("train: empty unlabeled target pool");
  pool_ = iota_rows(static_cast<std::size_t>(data_.source_like_train.size()));
  st_.student = net_.init(mix(cfg_.seed, 1));
  st_.hallucinator = hal_.init(mix(cfg_.seed, 2));
  st_.teacher = ema_init(st_.student, cfg_.ema_beta);
  st_.adam_student = Adam<float>(st_.student);
  st_.adam_hal = Adam<float>(st_.hallucinator);
}

int Trainer::steps_per_epoch() const {
  const auto n = static_cast<std::int64_t>(pool_.size());
  return static_cast<int>((n + cfg_.unlabeled_batch - 1) / cfg_.unlabeled_batch);
}

Episode Trainer::episode(int epoch, int step) const {
  std::mt19937_64 perm_rng(mix(cfg_.seed, 1000 + static_cast<std::uint64_t>(epoch)));
  auto perm = pool_;
  std::shuffle(perm.begin(), perm.end(), perm_rng);
  std::vector<std::int64_t> chunk;
  for (int i = 0; i < cfg_.unlabeled_batch; ++i) {
    chunk.push_back(perm[(static_cast<std::size_t>(step) * cfg_.unlabeled_batch + i) % perm.size()]);
  }
  const auto& lab = cfg_.mode == Mode::supervised_only ? data_.target_train : data_.labeled_source;
  const bool episodic = is_episodic(cfg_.mode);
  EpisodeSizes sizes{episodic ? cfg_.train_pairs : 0, episodic ? cfg_.test_pairs : 0, cfg_.labeled_batch,
                     cfg_.unlabeled_batch};
  const auto seed = mix(mix(cfg_.seed, static_cast<std::uint64_t>(epoch)), 7919 + static_cast<std::uint64_t>(step));
  return sample_episode(lab.size(), static_cast<std::int64_t>(pool_.size()), chunk, sizes,
                        cfg_.rotation_degrees * 3.141592653589793 / 180.0, seed);
}

Tensor<float> Trainer::labeled_images(const Episode& ep, LabelMap& labels) const {
  const auto& lab = cfg_.mode == Mode::supervised_only ? data_.target_train : data_.labeled_source;
  auto x = image_batch<float>(lab, ep.labeled);
  labels = label_batch(lab, ep.labeled);
  const bool rotate = std::any_of(ep.rotations.begin(), ep.rotations.end(), [](double r) { return r != 0.0; });
  if (!rotate) return x;
  std::vector<float> angles(ep.rotations.begin(), ep.rotations.end());
  const auto t = SpatialTransform<float>::rotation(angles);
  labels = warp_labels(labels, t);
  return warp(x, t, Interp::bilinear);
}

StepLosses Trainer::meta_train_loss(const ParamSet<float>& theta, const ParamSet<float>& psi, const Episode& ep,
                                    double lambda_trans, Tensor<float>* out) {
  LabelMap labels;
  auto x = labeled_images(ep, labels);
  std::vector<std::int64_t> moving_rows, fixed_rows;
  for (const auto& p : ep.train_pairs) {
    moving_rows.push_back(p.moving);
    fixed_rows.push_back(p.fixed);
  }
  const auto aug_rows = iota_rows(static_cast<std::size_t>(cfg_.augmented));
  auto moving = image_batch<float>(data_.labeled_source, moving_rows);
  auto moving_labels = label_batch(data_.labeled_source, moving_rows);
  StepLosses l;
  Tensor<float> trans;
  Tensor<float> aug;
  LabelMap aug_labels;
  if (uses_hallucinator(cfg_.mode)) {
    auto fixed = image_batch<float>(data_.source_like_train, fixed_rows);
    auto t = hal_.transform(psi, moving, fixed);
    ++st_.counters.transforms;
    auto moved = warp(moving, t, Interp::bilinear);
    trans = add(trans_loss(moved, fixed), hal_.regularizer(t));
    ++st_.counters.trans_terms;
    ++st_.counters.target_terms;
    if (cfg_.augmented > 0) {
      aug = gather_batch(moved, aug_rows);
      aug_labels = warp_labels(label_rows(moving_labels, aug_rows), t.select(aug_rows));
    }
  } else if (cfg_.augmented > 0) {
    aug = gather_batch(moving, aug_rows);
    aug_labels = label_rows(moving_labels, aug_rows);
  }
  auto images = aug.defined() ? concat_batch(x, aug) : x;
  auto seg = seg_loss(net_.forward(theta, images), concat_labels(labels, aug_labels));
  ++st_.counters.seg_terms;
  auto total = seg;
  if (trans.defined()) total = add(total, scale(trans, static_cast<float>(lambda_trans)));
  l.seg = value(seg);
  l.trans = value(trans);
  l.total = value(total);
  if (out) *out = total;
  return l;
}

StepLosses Trainer::meta_test_loss(const ParamSet<float>& theta, const ParamSet<float>& psi, const Episode& ep,
                                   double lambda_trans, double lambda_con, Tensor<float>* out) {
  std::vector<std::int64_t> moving_rows, fixed_rows;
  for (const auto& p : ep.test_pairs) {
    moving_rows.push_back(p.moving);
    fixed_rows.push_back(p.fixed);
  }
  auto moving = image_batch<float>(data_.labeled_source, moving_rows);
  auto labels = label_batch(data_.labeled_source, moving_rows);
  StepLosses l;
  Tensor<float> seg, trans, con;
  std::optional<SpatialTransform<float>> t;
  if (uses_hallucinator(cfg_.mode)) {
    auto fixed = image_batch<float>(data_.source_like_train, fixed_rows);
    t = hal_.transform(psi, moving, fixed);
    ++st_.counters.transforms;
    auto moved = warp(moving, *t, Interp::bilinear);
    trans = add(trans_loss(moved, fixed), hal_.regularizer(*t));
    ++st_.counters.trans_terms;
    ++st_.counters.target_terms;
    seg = seg_loss(net_.forward(theta, concat_batch(moving, moved)), concat_labels(labels, warp_labels(labels, *t)));
  } else {
    seg = seg_loss(net_.forward(theta, moving), labels);
  }
  ++st_.counters.seg_terms;
  auto unl = image_batch<float>(data_.source_like_train, ep.unlabeled);
  auto x = concat_batch(moving, unl);
  const NoiseConfig noise{cfg_.noise_sigma, ep.noise_seed};
  if (cfg_.mode == Mode::full) {
    std::vector<std::int64_t> cycle;
    for (std::int64_t i = 0; i < x.dim(0); ++i) cycle.push_back(i % static_cast<std::int64_t>(moving_rows.size()));
    con = consistency_terms(net_, theta, st_.teacher.params, t->select(cycle), x, noise).loss;
  } else {
    con = consistency_terms(net_, theta, st_.teacher.params, x, noise).loss;
  }
  ++st_.counters.con_terms;
  ++st_.counters.target_terms;
  auto total = add(seg, scale(con, static_cast<float>(lambda_con)));
  if (trans.defined()) total = add(total, scale(trans, static_cast<float>(lambda_trans)));
  l.seg = value(seg);
  l.trans = value(trans);
  l.con = value(con);
  l.total = value(total);
  if (out) *out = total;
  return l;
}

StepLosses Trainer::supervised_loss(const ParamSet<float>& theta, const Episode& ep, double lambda_con,
                                    Tensor<float>* out) {
  LabelMap labels;
  auto x = labeled_images(ep, labels);
  auto seg = seg_loss(net_.forward(theta, x), labels);
  ++st_.counters.seg_terms;
  StepLosses l;
  auto total = seg;
  if (cfg_.mode == Mode::mt) {
    auto unl = image_batch<float>(data_.source_like_train, ep.unlabeled);
    auto con = consistency_terms(net_, theta, st_.teacher.params, concat_batch(x, unl),
                                 NoiseConfig{cfg_.noise_sigma, ep.noise_seed})
                   .loss;
    ++st_.counters.con_terms;
    ++st_.counters.target_terms;
    total = add(total, scale(con, static_cast<float>(lambda_con)));
    l.con = value(con);
  }
  l.seg = value(seg);
  l.total = value(total);
  if (out) *out = total;
  return l;
}

GradList<float> Trainer::grads_of(const ParamSet<float>& a, const ParamSet<float>* b) const {
  auto g = a.gradients();
  if (b) {
    auto gb = b->gradients();
    g.insert(g.end(), std::make_move_iterator(gb.begin()), std::make_move_iterator(gb.end()));
  }
  return g;
}

void Trainer::check_finite(const StepLosses& l, const Episode&) const {
  for (double v : {l.seg, l.trans, l.con, l.total}) {
    if (!std::isfinite(v) || std::abs(v) > cfg_.divergence_threshold) {
      std::ostringstream os;
      os << "numerical abort: loss " << v << " (seg " << l.seg << ", trans " << l.trans << ", con " << l.con
         << ") exceeds the divergence threshold " << cfg_.divergence_threshold << " or is not finite";
      throw DivergenceError(os.str());
    }
  }
}

StepLosses Trainer::step(const Episode& ep, double lambda, double lr) {
  auto& theta = st_.student;
  auto& psi = st_.hallucinator;
  const bool hal = uses_hallucinator(cfg_.mode);
  StepLosses out;
  if (!is_episodic(cfg_.mode)) {
    theta.set_requires_grad(true);
    {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      Tensor<float> loss;
      out = supervised_loss(theta, ep, lambda, &loss);
      check_finite(out, ep);
      tape.backward(loss);
    }
    const auto g = theta.gradients();
    theta.clear_grads();
    st_.adam_student.step(theta, g, lr);
  } else {
    const auto nt = theta.size();
    auto to_params = [&](const GradList<float>& w, ParamSet<float>& th, ParamSet<float>& ps) {
      th = theta.clone();
      ps = psi.clone();
      for (std::size_t i = 0; i < nt; ++i) std::copy(w[i].begin(), w[i].end(), th[i].mutable_data().begin());
      if (hal)
        for (std::size_t i = 0; i < ps.size(); ++i)
          std::copy(w[nt + i].begin(), w[nt + i].end(), ps[i].mutable_data().begin());
      th.set_requires_grad(true);
      ps.set_requires_grad(hal);
    };
    StepLosses tr, te;
    bool first_train = true;
    auto train_grad = [&](const GradList<float>& w) {
      ParamSet<float> th, ps;
      to_params(w, th, ps);
      Tape<float> tape;
      TapeScope<float> scope(tape);
      Tensor<float> loss;
      auto v = meta_train_loss(th, ps, ep, lambda, &loss);
      check_finite(v, ep);
      tape.backward(loss);
      if (first_train) tr = v;
      first_train = false;
      return grads_of(th, hal ? &ps : nullptr);
    };
    auto test_grad = [&](const GradList<float>& w) {
      ParamSet<float> th, ps;
      to_params(w, th, ps);
      Tape<float> tape;
      TapeScope<float> scope(tape);
      Tensor<float> loss;
      te = meta_test_loss(th, ps, ep, lambda, lambda, &loss);
      check_finite(te, ep);
      tape.backward(loss);
      return grads_of(th, hal ? &ps : nullptr);
    };
    GradList<float> w;
    for (std::size_t i = 0; i < nt; ++i) w.emplace_back(theta[i].data().begin(), theta[i].data().end());
    if (hal)
      for (std::size_t i = 0; i < psi.size(); ++i) w.emplace_back(psi[i].data().begin(), psi[i].data().end());
    const auto g = meta_gradient<float>(w, train_grad, test_grad, cfg_.schedule.inner_lr, cfg_.second_order,
                                        cfg_.hvp_eps);
    st_.adam_student.step(theta, GradList<float>(g.begin(), g.begin() + nt), lr);
    if (hal) st_.adam_hal.step(psi, GradList<float>(g.begin() + nt, g.end()), lr);
    out.seg = tr.seg + te.seg;
    out.trans = tr.trans + te.trans;
    out.con = te.con;
    out.total = tr.total + te.total;
  }
  ema_update(st_.teacher, theta);
  ++st_.counters.steps;
  return out;
}

EpochLog Trainer::run_epoch(int epoch) {
  EpochLog log;
  log.epoch = epoch;
  log.lambda_con = log.lambda_trans = ramp_weight(epoch, cfg_.schedule);
  log.lr = lr_schedule(epoch, cfg_.schedule);
  const int steps = steps_per_epoch();
  for (int s = 0; s < steps; ++s) {
    const auto l = step(episode(epoch, s), log.lambda_con, log.lr);
    log.seg += l.seg / steps;
    log.trans += l.trans / steps;
    log.con += l.con / steps;
  }
  log.val_dice = val_set().size() > 0 ? evaluate(val_set(), cfg_.evaluate_teacher).dice_mean : 0.0;
  return log;
}

const DomainDataset& Trainer::val_set() const {
  const bool raw = cfg_.mode == Mode::no_adapt || cfg_.mode == Mode::supervised_only;
  return raw ? data_.target_val : data_.source_like_val;
}

const DomainDataset& Trainer::test_set() const {
  const bool raw = cfg_.mode == Mode::no_adapt || cfg_.mode == Mode::supervised_only;
  return raw ? data_.target_test : data_.source_like_test;
}

LabelMap predict_params(const UNet<float>& net, const ParamSet<float>& params, const DomainDataset& ds) {
  NoGradScope<float> off;
  LabelMap out(0, ds.h, ds.w);
  constexpr std::int64_t kChunk = 8;
  for (std::int64_t start = 0; start < ds.size(); start += kChunk) {
    const auto rows = iota_rows(static_cast<std::size_t>(std::min(kChunk, ds.size() - start)), start);
    out = concat_labels(out, argmax_channels(net.forward(params, image_batch<float>(ds, rows))));
  }
  return out;
}

MetricsReport evaluate_params(const UNet<float>& net, const ParamSet<float>& params, const DomainDataset& ds) {
  if (ds.labeled_indices().size() != static_cast<std::size_t>(ds.size())) {
    throw std::invalid_argument("evaluate: every evaluation item needs ground truth");
  }
  std::vector<std::string> names(kClassNames.begin(), kClassNames.end());
  return score_predictions(predict_params(net, params, ds), ds.labels, ds.subjects, kClasses, names);
}

LabelMap Trainer::predict(const DomainDataset& ds, bool teacher) const {
  return predict_params(net_, teacher ? st_.teacher.params : st_.student, ds);
}

MetricsReport Trainer::evaluate(const DomainDataset& ds, bool teacher) const {
  return evaluate_params(net_, teacher ? st_.teacher.params : st_.student, ds);
}

std::string epoch_log_csv_header() { return "epoch,L_seg,L_trans,L_con,lambda_con,lambda_trans,lr,val_dice\n"; }

std::string epoch_log_csv_row(const EpochLog& e) {
  std::ostringstream os;
  os << std::setprecision(17) << e.epoch << "," << e.seg << "," << e.trans << "," << e.con << "," << e.lambda_con
     << "," << e.lambda_trans << "," << e.lr << "," << e.val_dice << "\n";
  return os.str();
}

namespace {

ParamSet<float> moments_as_params(const ParamSet<float>& layout, const std::vector<std::vector<float>>& m,
                                  const std::string& prefix) {
  ParamSet<float> out;
  for (std::size_t i = 0; i < layout.size(); ++i) out.add(prefix + layout.name(i), Tensor<float>::from(layout[i].shape(), m[i]));
  return out;
}

void restore_moments(const ParamSet<float>& stored, std::vector<std::vector<float>>& m) {
  if (stored.size() != m.size()) throw FormatError("optimizer state does not match the parameter layout");
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto d = stored[i].data();
    if (d.size() != m[i].size()) throw FormatError("optimizer state size mismatch for " + stored.name(i));
    m[i].assign(d.begin(), d.end());
  }
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
  out << s;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

}  // namespace

void Trainer::save_state(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_params(st_.student, dir / "student.mhck");
  save_params(st_.teacher.params, dir / "teacher.mhck");
  save_params(st_.hallucinator, dir / "hallucinator.mhck");
  save_params(moments_as_params(st_.student, st_.adam_student.first_moment(), "m."), dir / "adam_student_m.mhck");
  save_params(moments_as_params(st_.student, st_.adam_student.second_moment(), "v."), dir / "adam_student_v.mhck");
  save_params(moments_as_params(st_.hallucinator, st_.adam_hal.first_moment(), "m."), dir / "adam_hal_m.mhck");
  save_params(moments_as_params(st_.hallucinator, st_.adam_hal.second_moment(), "v."), dir / "adam_hal_v.mhck");
  nlohmann::ordered_json j;
  j["epoch"] = st_.epoch;
  j["mode"] = mode_name(cfg_.mode);
  j["seed"] = cfg_.seed;
  j["adam_student_steps"] = st_.adam_student.steps();
  j["adam_hal_steps"] = st_.adam_hal.steps();
  j["teacher_steps"] = st_.teacher.step_count;
  j["counters"] = {{"seg_terms", st_.counters.seg_terms},   {"trans_terms", st_.counters.trans_terms},
                   {"con_terms", st_.counters.con_terms},   {"transforms", st_.counters.transforms},
                   {"target_terms", st_.counters.target_terms}, {"steps", st_.counters.steps}};
  auto& rows = j["log"] = nlohmann::ordered_json::array();
  for (const auto& e : st_.log) {
    rows.push_back({e.epoch, e.seg, e.trans, e.con, e.lambda_con, e.lambda_trans, e.lr, e.val_dice});
  }
  write_text(dir / "state.json", j.dump(1) + "\n");
}

void Trainer::load_state(const std::filesystem::path& dir) {
  std::ifstream in(dir / "state.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "state.json").string());
  const auto j = nlohmann::json::parse(in);
  if (j.at("mode").get<std::string>() != mode_name(cfg_.mode)) {
    throw std::invalid_argument("resume: checkpoint mode " + j.at("mode").get<std::string>() + " differs from " +
                                mode_name(cfg_.mode));
  }
  auto student = load_params<float>(dir / "student.mhck");
  auto teacher = load_params<float>(dir / "teacher.mhck");
  auto hal = load_params<float>(dir / "hallucinator.mhck");
  if (!student.same_layout(st_.student) || !teacher.same_layout(st_.student) || !hal.same_layout(st_.hallucinator)) {
    throw FormatError("resume: checkpoint does not match the configured networks");
  }
  st_.student = std::move(student);
  st_.teacher.params = std::move(teacher);
  st_.teacher.params.set_requires_grad(false);
  st_.teacher.step_count = j.at("teacher_steps").get<std::int64_t>();
  st_.hallucinator = std::move(hal);
  restore_moments(load_params<float>(dir / "adam_student_m.mhck"), st_.adam_student.first_moment());
  restore_moments(load_params<float>(dir / "adam_student_v.mhck"), st_.adam_student.second_moment());
  restore_moments(load_params<float>(dir / "adam_hal_m.mhck"), st_.adam_hal.first_moment());
  restore_moments(load_params<float>(dir / "adam_hal_v.mhck"), st_.adam_hal.second_moment());
  st_.adam_student.set_steps(j.at("adam_student_steps").get<std::int64_t>());
  st_.adam_hal.set_steps(j.at("adam_hal_steps").get<std::int64_t>());
  st_.epoch = j.at("epoch").get<int>();
  const auto& c = j.at("counters");
  st_.counters = {c.at("seg_terms"), c.at("trans_terms"), c.at("con_terms"),
                  c.at("transforms"), c.at("target_terms"), c.at("steps")};
  st_.log.clear();
  for (const auto& r : j.at("log")) {
    st_.log.push_back({r[0].get<int>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>(),
                       r[4].get<double>(), r[5].get<double>(), r[6].get<double>(), r[7].get<double>()});
  }
}

void Trainer::train(const std::filesystem::path& run_dir, const std::function<void(const EpochLog&)>& on_epoch) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  const auto latest = run_dir / "state";
  if (fs::exists(latest / "state.json")) load_state(latest);
  auto write_log = [&] {
    std::string csv = epoch_log_csv_header();
    for (const auto& e : st_.log) csv += epoch_log_csv_row(e);
    write_text(run_dir / "metrics.csv", csv);
  };
  auto checkpoint = [&] {
    std::ostringstream name;
    name << "epoch_" << std::setw(3) << std::setfill('0') << st_.epoch;
    save_state(run_dir / "checkpoints" / name.str());
    const auto tmp = run_dir / "state.tmp";
    fs::remove_all(tmp);
    save_state(tmp);
    fs::remove_all(latest);
    fs::rename(tmp, latest);
  };
  for (int e = st_.epoch + 1; e <= cfg_.epochs; ++e) {
    EpochLog log;
    try {
      log = run_epoch(e);
    } catch (const DivergenceError& err) {
      nlohmann::ordered_json j;
      j["epoch"] = e;
      j["last_good_epoch"] = st_.epoch;
      j["error"] = err.what();
      write_text(run_dir / "abort.json", j.dump(2) + "\n");
      throw;
    }
    st_.epoch = e;
    st_.log.push_back(log);
    write_log();
    if (on_epoch) on_epoch(log);
    if (e % cfg_.checkpoint_every == 0 || e == cfg_.epochs) checkpoint();
  }
  write_log();
}

}  // namespace mhal
