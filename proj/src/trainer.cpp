#include "udit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>

#include "udit/checkpoint.hpp"
#include "udit/common.hpp"
#include "udit/datasets.hpp"
#include "udit/image.hpp"
#include "udit/optim.hpp"
#include "udit/rng.hpp"

namespace udit::train {

namespace {

namespace fs = std::filesystem;

// Per-step stream tags: step k (1-based) owns streams (k<<2)|1 (batch
// indices) and (k<<2)|2 (style samples). Stream 0 is model initialization.
constexpr uint64_t kBatchTag = 1;
constexpr uint64_t kStyleTag = 2;

uint64_t step_stream(int64_t next_iter, uint64_t tag) {
  return (uint64_t(next_iter) << 2) | tag;
}

}  // namespace

void TrainConfig::validate() const {
  require<ConfigError>(!dataset_root.empty(), "dataset_root must be set");
  require<ConfigError>(!out_dir.empty(), "out_dir must be set");
  network.validate();
  weights.validate();
  require<ConfigError>(weights.lambda_u == 0.0 || !extractor_path.empty(),
                       "lambda_u > 0 requires extractor_path");
  require<ConfigError>(iterations >= 1, "iterations must be >= 1, got ",
                       iterations);
  require<ConfigError>(batch_size >= 1, "batch_size must be >= 1, got ",
                       batch_size);
  for (double lr : {lr_g, lr_d})
    require<ConfigError>(std::isfinite(lr) && lr > 0.0,
                         "learning rates must be positive, got ", lr);
  require<ConfigError>(checkpoint_every >= 1,
                       "checkpoint_every must be >= 1, got ",
                       checkpoint_every);
  require<ConfigError>(log_every >= 1, "log_every must be >= 1, got ",
                       log_every);
}

Json TrainConfig::to_json() const {
  Json j;
  j["dataset_root"] = dataset_root;
  j["out_dir"] = out_dir;
  j["network"] = hyper_to_json(network);
  j["loss_weights"] = weights_to_json(weights);
  j["extractor_path"] = extractor_path;
  j["iterations"] = iterations;
  j["batch_size"] = batch_size;
  j["lr_g"] = lr_g;
  j["lr_d"] = lr_d;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["log_every"] = log_every;
  return j;
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  c.dataset_root = json_get_or<std::string>(j, "dataset_root", "");
  c.out_dir = json_get_or<std::string>(j, "out_dir", "");
  if (j.contains("network")) c.network = hyper_from_json(j.at("network"));
  if (j.contains("loss_weights"))
    c.weights = weights_from_json(j.at("loss_weights"));
  c.extractor_path = json_get_or<std::string>(j, "extractor_path", "");
  c.iterations = json_get_or<int64_t>(j, "iterations", c.iterations);
  c.batch_size = json_get_or<int>(j, "batch_size", c.batch_size);
  c.lr_g = json_get_or<double>(j, "lr_g", c.lr_g);
  c.lr_d = json_get_or<double>(j, "lr_d", c.lr_d);
  c.seed = json_get_or<uint64_t>(j, "seed", c.seed);
  c.checkpoint_every =
      json_get_or<int64_t>(j, "checkpoint_every", c.checkpoint_every);
  c.log_every = json_get_or<int64_t>(j, "log_every", c.log_every);
  return c;
}

std::string StepLog::to_json_line() const {
  Json j;
  j["iteration"] = iteration;
  j["d_A"] = d_A;
  j["d_B"] = d_B;
  const Json breakdown = json_parse(g.to_json(), "loss breakdown");
  for (const auto& [key, value] : breakdown.items()) j[key] = value;
  return j.dump();
}

TrainState make_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.model = nets::TranslationModel<float>::create(cfg.network, cfg.weights,
                                                   cfg.seed);
  st.lr_g = cfg.lr_g;
  st.lr_d = cfg.lr_d;
  if (cfg.weights.lambda_u > 0.0) {
    st.extractor = semext::load_extractor(cfg.extractor_path);
    st.use_extractor = true;
    require<ConfigError>(
        st.extractor.hyper.image_size == cfg.network.image_size &&
            st.extractor.hyper.in_channels == cfg.network.in_channels,
        "extractor was built for ", st.extractor.hyper.in_channels, "x",
        st.extractor.hyper.image_size, "x", st.extractor.hyper.image_size,
        " images but the network takes ", cfg.network.in_channels, "x",
        cfg.network.image_size, "x", cfg.network.image_size);
  }
  return st;
}

StepLog train_step(TrainState& st, const Array<float>& batch_A,
                   const Array<float>& batch_B) {
  nets::TranslationModel<float>& m = st.model;
  m.check_image(batch_A);
  m.check_image(batch_B);
  require<ShapeError>(batch_A.dim(0) == batch_B.dim(0),
                      "domain batches must match in size, got ",
                      batch_A.dim(0), " vs ", batch_B.dim(0));
  const losses::LossWeights& w = m.weights;
  const bool semantic = w.lambda_u > 0.0;
  require<StateError>(!semantic || st.use_extractor,
                      "lambda_u > 0 but no extractor is loaded");

  const int n = batch_A.dim(0);
  const int64_t next = m.iteration + 1;
  Philox style_rng(m.seed, step_stream(next, kStyleTag));
  const Array<float> style_a =
      nets::sample_style<float>(n, m.hyper.style_dim, style_rng);
  const Array<float> style_b =
      nets::sample_style<float>(n, m.hyper.style_dim, style_rng);

  // --- discriminator update on detached translations --------------------
  Array<float> fake_ba, fake_ab;  // fake_ba lives in domain A
  {
    ag::Tape<float> t;
    t.set_grad_enabled(false);
    nets::ContentVar ca = m.enc_c[0].forward(t, t.leaf(batch_A), false);
    nets::ContentVar cb = m.enc_c[1].forward(t, t.leaf(batch_B), false);
    fake_ab = t.val(m.dec[1].forward(t, ca, t.leaf(style_b), false));
    fake_ba = t.val(m.dec[0].forward(t, cb, t.leaf(style_a), false));
  }
  const std::vector<ag::Param<float>*> d_params = m.discriminator_params();
  double d_A, d_B;
  {
    ag::Tape<float> t;
    std::vector<int> fa = m.dis[0].forward(t, t.leaf(fake_ba), true);
    std::vector<int> ra = m.dis[0].forward(t, t.leaf(batch_A), true);
    std::vector<int> fb = m.dis[1].forward(t, t.leaf(fake_ab), true);
    std::vector<int> rb = m.dis[1].forward(t, t.leaf(batch_B), true);
    const int loss_a = losses::adversarial_loss_d(t, fa, ra);
    const int loss_b = losses::adversarial_loss_d(t, fb, rb);
    const std::vector<int> ids = {loss_a, loss_b};
    const std::vector<float> ws = {1.0f, 1.0f};
    const int loss = t.weighted_sum(ids, ws);
    ag::zero_grads(d_params);
    t.backward(loss);
    ag::adam_update(d_params, ag::AdamConfig{st.lr_d, 0.5, 0.999, 1e-8},
                    next);
    d_A = double(t.val(loss_a).v[0]);
    d_B = double(t.val(loss_b).v[0]);
  }

  // --- generator/encoder update ------------------------------------------
  // Semantic targets are plain data: frozen-extractor features of the
  // sources, computed outside the graph.
  Array<float> u_a, u_b;
  if (semantic) {
    u_a = st.extractor.extract(batch_A);
    u_b = st.extractor.extract(batch_B);
  }
  const std::vector<ag::Param<float>*> g_params = m.generator_params();
  losses::LossBreakdown bd;
  {
    ag::Tape<float> t;
    const int xa = t.leaf(batch_A);
    const int xb = t.leaf(batch_B);
    nets::ContentVar ca = m.enc_c[0].forward(t, xa, true);
    nets::ContentVar cb = m.enc_c[1].forward(t, xb, true);
    const int sa_own = m.enc_s[0].forward(t, xa, true);
    const int sb_own = m.enc_s[1].forward(t, xb, true);

    // Within-domain reconstruction uses the image's own style; cross-domain
    // translation uses the sampled codes.
    const int x_aa = m.dec[0].forward(t, ca, sa_own, true);
    const int x_bb = m.dec[1].forward(t, cb, sb_own, true);
    const int style_a_id = t.leaf(style_a);
    const int style_b_id = t.leaf(style_b);
    const int x_ab = m.dec[1].forward(t, ca, style_b_id, true);
    const int x_ba = m.dec[0].forward(t, cb, style_a_id, true);

    nets::ContentVar c_ab = m.enc_c[1].forward(t, x_ab, true);
    nets::ContentVar c_ba = m.enc_c[0].forward(t, x_ba, true);
    const int s_ab = m.enc_s[1].forward(t, x_ab, true);
    const int s_ba = m.enc_s[0].forward(t, x_ba, true);

    // Discriminators judge the translations with their parameters frozen:
    // the generator update must not touch them.
    std::vector<int> score_ba = m.dis[0].forward(t, x_ba, false);
    std::vector<int> score_ab = m.dis[1].forward(t, x_ab, false);

    const int gan_A = losses::adversarial_loss_g(t, score_ba);
    const int gan_B = losses::adversarial_loss_g(t, score_ab);
    const int rx_A = losses::image_recon_loss(t, xa, x_aa);
    const int rx_B = losses::image_recon_loss(t, xb, x_bb);
    const int rc_A = losses::content_recon_loss(t, ca.features,
                                                c_ab.features);
    const int rc_B = losses::content_recon_loss(t, cb.features,
                                                c_ba.features);
    const int rs_A = losses::style_recon_loss(t, style_b_id, s_ab);
    const int rs_B = losses::style_recon_loss(t, style_a_id, s_ba);

    std::vector<int> ids = {gan_A, gan_B, rx_A, rx_B, rc_A, rc_B, rs_A, rs_B};
    std::vector<float> ws = {1.0f,
                             1.0f,
                             float(w.lambda_x),
                             float(w.lambda_x),
                             float(w.lambda_c),
                             float(w.lambda_c),
                             float(w.lambda_s),
                             float(w.lambda_s)};
    int sem_A = -1, sem_B = -1;
    if (semantic) {
      sem_A = losses::semantic_constraint_loss(
          t, t.leaf(u_a), st.extractor.forward(t, x_ab));
      sem_B = losses::semantic_constraint_loss(
          t, t.leaf(u_b), st.extractor.forward(t, x_ba));
      ids.insert(ids.end(), {sem_A, sem_B});
      ws.insert(ws.end(), {float(w.lambda_u), float(w.lambda_u)});
    }
    const int total = t.weighted_sum(ids, ws);
    ag::zero_grads(g_params);
    t.backward(total);
    ag::adam_update(g_params, ag::AdamConfig{st.lr_g, 0.5, 0.999, 1e-8},
                    next);

    auto scalar = [&t](int id) { return double(t.val(id).v[0]); };
    bd.gan_A = scalar(gan_A);
    bd.gan_B = scalar(gan_B);
    bd.recon_x_A = scalar(rx_A);
    bd.recon_x_B = scalar(rx_B);
    bd.recon_c_A = scalar(rc_A);
    bd.recon_c_B = scalar(rc_B);
    bd.recon_s_A = scalar(rs_A);
    bd.recon_s_B = scalar(rs_B);
    if (semantic) {
      bd.sem_A = scalar(sem_A);
      bd.sem_B = scalar(sem_B);
    }
    bd.total = scalar(total);
  }

  if (!bd.finite() || !std::isfinite(d_A) || !std::isfinite(d_B))
    throw TrainError(cat("non-finite loss at iteration ", next),
                     bd.to_json());

  m.iteration = next;
  StepLog log;
  log.iteration = next;
  log.g = bd;
  log.d_A = d_A;
  log.d_B = d_B;
  return log;
}

namespace {

struct DomainImages {
  std::vector<Array<float>> images;
};

DomainImages load_domain_images(const std::string& root, char domain,
                                const nets::NetHyper& h) {
  DomainImages out;
  for (const auto& rec : data::load_domain(root, domain)) {
    Array<float> img = data::load_record_image(root, rec);
    require<ConfigError>(
        img.shape ==
            std::vector<int>{h.in_channels, h.image_size, h.image_size},
        root, "/", rec.image_path, " is ", shape_str(img.shape),
        " but the network takes [", h.in_channels, ",", h.image_size, ",",
        h.image_size, "]");
    out.images.push_back(std::move(img));
  }
  return out;
}

Array<float> sample_batch(const DomainImages& d, int batch, Philox& rng) {
  std::vector<Array<float>> picked;
  picked.reserve(size_t(batch));
  for (int i = 0; i < batch; ++i)
    picked.push_back(d.images[size_t(rng.uniform_u64(d.images.size()))]);
  return img::stack(picked);
}

struct ResumePoint {
  std::string path;
  int64_t iteration = 0;
};

std::string ckpt_name(int64_t iter) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld.udit",
                static_cast<long long>(iter));
  return buf;
}

// Newest checkpoint in out_dir usable for a run of `iterations` steps.
// The final checkpoint of a shorter earlier run is a valid resume point;
// one of a longer run is an error the caller raises.
std::optional<ResumePoint> find_resume(const std::string& out_dir,
                                       int64_t iterations,
                                       int64_t* final_iteration) {
  *final_iteration = -1;
  std::optional<ResumePoint> best;
  if (!fs::is_directory(out_dir)) return best;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    int64_t iter = -1;
    if (name == "ckpt_final.udit") {
      iter = json_get<int64_t>(ckpt::read_archive(entry.path().string()).meta,
                               "iteration");
      *final_iteration = iter;
    } else if (name.size() == 16 && name.rfind("ckpt_", 0) == 0 &&
               name.substr(11) == ".udit") {
      iter = std::strtoll(name.substr(5, 6).c_str(), nullptr, 10);
    } else {
      continue;
    }
    if (iter < 1 || iter > iterations) continue;
    if (!best || iter > best->iteration)
      best = ResumePoint{entry.path().string(), iter};
  }
  return best;
}

}  // namespace

std::string train(const TrainConfig& cfg) {
  cfg.validate();
  const std::vector<std::string> violations =
      data::validate_manifest(cfg.dataset_root);
  if (!violations.empty()) {
    std::string msg = cat("dataset ", cfg.dataset_root, " failed validation (",
                          violations.size(), " problem(s)):");
    for (size_t i = 0; i < violations.size() && i < 5; ++i)
      msg += cat("\n  - ", violations[i]);
    throw DataError(msg);
  }

  fs::create_directories(cfg.out_dir);
  const std::string final_path =
      (fs::path(cfg.out_dir) / "ckpt_final.udit").string();
  const std::string log_path =
      (fs::path(cfg.out_dir) / "train_log.jsonl").string();

  int64_t final_iteration = -1;
  const std::optional<ResumePoint> resume =
      find_resume(cfg.out_dir, cfg.iterations, &final_iteration);
  if (final_iteration == cfg.iterations) return final_path;  // already done
  require<ConfigError>(final_iteration <= cfg.iterations,
                       "out_dir holds a finished ", final_iteration,
                       "-iteration run; cannot train to only ",
                       cfg.iterations);

  TrainState st = make_state(cfg);
  if (resume) {
    st.model = ckpt::load_model(resume->path);
    require<ConfigError>(
        hyper_to_json(st.model.hyper) == hyper_to_json(cfg.network) &&
            weights_to_json(st.model.weights) == weights_to_json(cfg.weights) &&
            st.model.seed == cfg.seed,
        resume->path, " was trained under a different configuration");
  }

  const DomainImages domain_A =
      load_domain_images(cfg.dataset_root, 'A', cfg.network);
  const DomainImages domain_B =
      load_domain_images(cfg.dataset_root, 'B', cfg.network);

  // Fresh runs start a fresh log; resumed runs append so the combined file
  // matches an uninterrupted run's trace line for line.
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  require<IoError>(log.good(), "cannot open ", log_path, " for writing");

  while (st.model.iteration < cfg.iterations) {
    const int64_t next = st.model.iteration + 1;
    Philox batch_rng(cfg.seed, step_stream(next, kBatchTag));
    const Array<float> batch_A =
        sample_batch(domain_A, cfg.batch_size, batch_rng);
    const Array<float> batch_B =
        sample_batch(domain_B, cfg.batch_size, batch_rng);
    const StepLog step = train_step(st, batch_A, batch_B);
    if (step.iteration % cfg.log_every == 0) {
      log << step.to_json_line() << '\n';
      log.flush();
      require<IoError>(log.good(), "short write to ", log_path);
    }
    if (step.iteration % cfg.checkpoint_every == 0) {
      const std::string path =
          (fs::path(cfg.out_dir) / ckpt_name(step.iteration)).string();
      ckpt::save_model(path, st.model);
    }
  }
  ckpt::save_model(final_path, st.model);
  return final_path;
}

std::vector<Array<float>> translate(nets::TranslationModel<float>& model,
                                    const Array<float>& image,
                                    int from_domain, int k, uint64_t seed) {
  require<ConfigError>(from_domain == 0 || from_domain == 1,
                       "from_domain must be 0 (A) or 1 (B), got ",
                       from_domain);
  require<ConfigError>(k >= 1, "sample count must be >= 1, got ", k);
  require<ShapeError>(
      image.shape == std::vector<int>{model.hyper.in_channels,
                                      model.hyper.image_size,
                                      model.hyper.image_size},
      "translate expects a [", model.hyper.in_channels, ",",
      model.hyper.image_size, ",", model.hyper.image_size, "] image, got ",
      shape_str(image.shape));

  const int to_domain = 1 - from_domain;
  const std::vector<Array<float>> one = {image};
  const nets::ContentCode<float> content =
      nets::content_encode(model, from_domain, img::stack(one));
  Philox rng(seed, 0);
  std::vector<Array<float>> out;
  out.reserve(size_t(k));
  for (int i = 0; i < k; ++i) {
    const Array<float> style =
        nets::sample_style<float>(1, model.hyper.style_dim, rng);
    out.push_back(img::slice(nets::decode(model, to_domain, content, style),
                             0));
  }
  return out;
}

}  // namespace udit::train
