#include "emi/train.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

namespace emi {

AdamState make_adam_state(BranchModel& model) {
  AdamState st;
  for (auto& [name, t] : model.named_params()) {
    st.m.emplace_back(t->numel(), 0.0);
    st.v.emplace_back(t->numel(), 0.0);
  }
  return st;
}

void adam_step(AdamState& st, BranchModel& model, double lr) {
  auto params = model.named_params();
  if (params.size() != st.m.size())
    throw ContractError("adam: state has " + std::to_string(st.m.size()) +
                        " slots for " + std::to_string(params.size()) +
                        " params");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, double(st.step));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& t = *params[p].second;
    auto& m = st.m[p];
    auto& v = st.v[p];
    const bool has_g = t.has_grad();
    for (size_t i = 0; i < t.numel(); ++i) {
      const double g = has_g ? double(t.grad()[i]) : 0.0;
      if (!std::isfinite(g))
        throw ContractError("adam: non-finite gradient in " + params[p].first +
                            " at element " + std::to_string(i));
      t.value()[i] = Real(adam_apply(double(t.value()[i]), g, m[i], v[i], lr,
                                     st.beta1, st.beta2, st.eps, bc1, bc2));
    }
    if (has_g) t.zero_grad();
  }
}

double scheduler_update(SchedulerState& st, double val_metric, double lr,
                        int patience, double factor) {
  if (val_metric > st.best) {
    st.best = val_metric;
    st.since = 0;
    return lr;
  }
  ++st.since;
  if (st.since >= patience) {
    st.since = 0;
    return lr * factor;
  }
  return lr;
}

void write_train_log(const std::string& path,
                     const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "epoch,train_loss,val_mean_rho,lr\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", e.epoch,
                  e.train_loss, e.val_mean_rho, e.lr);
    out << buf;
  }
  if (!out) throw IoError("short write: " + path);
}

// Checkpoint container: "EMIC", format version, then named length-prefixed
// sections so unknown trailing sections can be rejected loudly.
namespace {

constexpr char kCkMagic[4] = {'E', 'M', 'I', 'C'};
constexpr uint32_t kCkVersion = 1;

void put_u32(std::string& b, uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(char(uint8_t(v >> s)));
}
void put_u64(std::string& b, uint64_t v) {
  for (int s = 0; s < 64; s += 8) b.push_back(char(uint8_t(v >> s)));
}
void put_f32(std::string& b, float v) { put_u32(b, std::bit_cast<uint32_t>(v)); }
void put_f64(std::string& b, double v) { put_u64(b, std::bit_cast<uint64_t>(v)); }
void put_str(std::string& b, const std::string& s) {
  put_u32(b, uint32_t(s.size()));
  b += s;
}

struct Reader {
  const uint8_t* p;
  size_t n, off = 0;
  std::string where;

  void need(size_t k) const {
    if (off + k > n)
      throw IoError("checkpoint: " + where + ": truncated section");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int s = 0; s < 32; s += 8) v |= uint32_t(p[off++]) << s;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int s = 0; s < 64; s += 8) v |= uint64_t(p[off++]) << s;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const uint32_t k = u32();
    need(k);
    std::string s(reinterpret_cast<const char*>(p + off), k);
    off += k;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string meta;
  meta.push_back(ck.modality == Modality::visual ? char(1) : char(2));
  meta.push_back(ck.has_train_state ? char(1) : char(0));
  put_u32(meta, uint32_t(ck.next_epoch));
  put_u32(meta, uint32_t(ck.params.size()));

  std::string config;
  put_u32(config, uint32_t(ck.cfg.d_model));
  put_u32(config, uint32_t(ck.cfg.num_heads));
  put_u32(config, uint32_t(ck.cfg.num_blocks));
  put_u32(config, uint32_t(ck.cfg.kernel_size));
  put_u32(config, uint32_t(ck.cfg.visual_len));
  put_u32(config, uint32_t(ck.cfg.audio_len));
  put_u32(config, uint32_t(ck.cfg.ffn_hidden));
  put_u32(config, uint32_t(ck.cfg.dilations.size()));
  for (int d : ck.cfg.dilations) put_u32(config, uint32_t(d));
  put_u64(config, ck.cfg.seed);

  std::string params;
  for (const auto& p : ck.params) {
    put_str(params, p.name);
    put_u32(params, uint32_t(p.shape.size()));
    for (int d : p.shape) put_u32(params, uint32_t(d));
    put_u64(params, p.data.size());
    for (Real v : p.data) put_f32(params, float(v));
  }

  std::string body;
  auto section = [&](const char* name, const std::string& payload) {
    put_str(body, name);
    put_u64(body, payload.size());
    body += payload;
  };
  section("meta", meta);
  section("config", config);
  section("params", params);
  if (ck.has_train_state) {
    std::string adam;
    put_u64(adam, uint64_t(ck.adam.step));
    for (size_t p = 0; p < ck.adam.m.size(); ++p) {
      put_u64(adam, ck.adam.m[p].size());
      for (double v : ck.adam.m[p]) put_f64(adam, v);
      for (double v : ck.adam.v[p]) put_f64(adam, v);
    }
    section("adam", adam);
    std::string sched;
    put_f64(sched, ck.lr);
    put_f64(sched, ck.sched.best);
    put_u32(sched, uint32_t(ck.sched.since));
    section("sched", sched);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kCkMagic, 4);
  std::string ver;
  put_u32(ver, kCkVersion);
  out.write(ver.data(), 4);
  out.write(body.data(), std::streamsize(body.size()));
  if (!out) throw IoError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kCkMagic, 4) != 0)
    throw IoError("checkpoint: " + path + ": not a checkpoint file");
  Reader top{buf.data(), buf.size(), 4, path};
  const uint32_t version = top.u32();
  if (version != kCkVersion)
    throw IoError("checkpoint: " + path + ": unsupported version " +
                  std::to_string(version));

  std::map<std::string, std::pair<size_t, size_t>> sections;  // name -> off,len
  while (top.off < top.n) {
    const std::string name = top.str();
    const uint64_t len = top.u64();
    top.need(size_t(len));
    sections[name] = {top.off, size_t(len)};
    top.off += size_t(len);
  }
  auto get = [&](const char* name) -> Reader {
    auto it = sections.find(name);
    if (it == sections.end())
      throw IoError("checkpoint: " + path + ": missing section '" + name + "'");
    return Reader{buf.data() + it->second.first, it->second.second, 0,
                  path + " [" + name + "]"};
  };
  for (const auto& [name, span] : sections)
    if (name != "meta" && name != "config" && name != "params" &&
        name != "adam" && name != "sched")
      throw IoError("checkpoint: " + path + ": unknown section '" + name + "'");

  Checkpoint ck;
  {
    Reader r = get("meta");
    r.need(2);
    const uint8_t mod = r.p[r.off++];
    if (mod != 1 && mod != 2)
      throw IoError("checkpoint: " + path + ": bad modality byte");
    ck.modality = mod == 1 ? Modality::visual : Modality::audio;
    ck.has_train_state = r.p[r.off++] != 0;
    ck.next_epoch = int(r.u32());
    const uint32_t count = r.u32();
    ck.params.resize(count);
  }
  {
    Reader r = get("config");
    ck.cfg.d_model = int(r.u32());
    ck.cfg.num_heads = int(r.u32());
    ck.cfg.num_blocks = int(r.u32());
    ck.cfg.kernel_size = int(r.u32());
    ck.cfg.visual_len = int(r.u32());
    ck.cfg.audio_len = int(r.u32());
    ck.cfg.ffn_hidden = int(r.u32());
    const uint32_t nd = r.u32();
    ck.cfg.dilations.clear();
    for (uint32_t i = 0; i < nd; ++i)
      ck.cfg.dilations.push_back(int(r.u32()));
    ck.cfg.seed = r.u64();
    ck.cfg.validate();
  }
  {
    Reader r = get("params");
    for (auto& p : ck.params) {
      p.name = r.str();
      const uint32_t ndim = r.u32();
      p.shape.clear();
      for (uint32_t i = 0; i < ndim; ++i) p.shape.push_back(int(r.u32()));
      const uint64_t count = r.u64();
      if (count != shape_numel(p.shape))
        throw IoError("checkpoint: " + path + ": param " + p.name +
                      " count does not match its shape");
      p.data.resize(size_t(count));
      for (auto& v : p.data) v = Real(r.f32());
    }
    if (r.off != r.n)
      throw IoError("checkpoint: " + path + ": trailing bytes in params");
  }
  if (ck.has_train_state) {
    Reader r = get("adam");
    ck.adam.step = int64_t(r.u64());
    ck.adam.m.resize(ck.params.size());
    ck.adam.v.resize(ck.params.size());
    for (size_t p = 0; p < ck.params.size(); ++p) {
      const uint64_t count = r.u64();
      if (count != ck.params[p].data.size())
        throw IoError("checkpoint: " + path + ": adam slot " +
                      std::to_string(p) + " size mismatch");
      ck.adam.m[p].resize(size_t(count));
      ck.adam.v[p].resize(size_t(count));
      for (auto& v : ck.adam.m[p]) v = r.f64();
      for (auto& v : ck.adam.v[p]) v = r.f64();
    }
    Reader s = get("sched");
    ck.lr = s.f64();
    ck.sched.best = s.f64();
    ck.sched.since = int(s.u32());
  }
  return ck;
}

BranchModel model_from_checkpoint(const Checkpoint& ck) {
  BranchModel model = build_branch<Real>(ck.cfg, ck.modality);
  auto params = model.named_params();
  if (params.size() != ck.params.size())
    throw ContractError("checkpoint holds " + std::to_string(ck.params.size()) +
                        " params, model expects " +
                        std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& blob = ck.params[i];
    auto& t = *params[i].second;
    if (blob.name != params[i].first)
      throw ContractError("checkpoint param " + std::to_string(i) + " is '" +
                          blob.name + "', model expects '" + params[i].first +
                          "'");
    if (blob.shape != t.shape())
      throw ContractError("checkpoint param " + blob.name + " has shape " +
                          shape_str(blob.shape) + ", model expects " +
                          shape_str(t.shape()));
    t.value() = blob.data;
  }
  return model;
}

Trainer make_trainer(const ModelConfig& mcfg, const TrainConfig& tcfg,
                     Modality modality) {
  Trainer tr;
  tr.modality = modality;
  tr.tcfg = tcfg;
  tr.model = build_branch<Real>(mcfg, modality);
  tr.adam = make_adam_state(tr.model);
  tr.lr = tcfg.lr;
  tr.next_epoch = 0;
  return tr;
}

Trainer trainer_from_checkpoint(const Checkpoint& ck, const TrainConfig& tcfg) {
  Trainer tr;
  tr.modality = ck.modality;
  tr.tcfg = tcfg;
  tr.model = model_from_checkpoint(ck);
  if (ck.has_train_state) {
    tr.adam = ck.adam;
    tr.sched = ck.sched;
    tr.lr = ck.lr;
    tr.next_epoch = ck.next_epoch;
  } else {
    tr.adam = make_adam_state(tr.model);
    tr.lr = tcfg.lr;
    tr.next_epoch = 0;
  }
  return tr;
}

Checkpoint make_checkpoint(Trainer& tr, bool include_train_state) {
  Checkpoint ck;
  ck.modality = tr.modality;
  ck.cfg = tr.model.cfg;
  for (auto& [name, t] : tr.model.named_params())
    ck.params.push_back({name, t->shape(), t->value()});
  ck.has_train_state = include_train_state;
  if (include_train_state) {
    ck.adam = tr.adam;
    ck.sched = tr.sched;
    ck.lr = tr.lr;
    ck.next_epoch = tr.next_epoch;
  }
  return ck;
}

TensorT<Real> mse_loss(TapeT<Real>& tp, const TensorT<Real>& pred,
                       const TensorT<Real>& target) {
  auto d = sub(tp, pred, target);
  return mean_all(tp, mul(tp, d, d));
}

namespace {

TensorT<Real> forward_sample(TapeT<Real>& tp, const BranchModel& model,
                             const Sample& s) {
  if (model.modality == Modality::visual) {
    auto feats = concat_visual_channels(tp, s.resnet, s.aus);
    return model.forward(tp, feats, s.visual_mask);
  }
  return model.forward(tp, s.audio, s.audio_mask);
}

}  // namespace

std::array<double, 6> predict_sample(const BranchModel& model,
                                     const Sample& s) {
  TapeT<Real> tp(false);
  const auto out = forward_sample(tp, model, s);
  std::array<double, 6> r{};
  for (int k = 0; k < 6; ++k) r[size_t(k)] = double(out.at(k));
  return r;
}

std::vector<std::array<double, 6>> predict_split(
    const BranchModel& model, const Manifest& m, Split split,
    std::vector<std::string>* ids_out,
    std::vector<std::array<double, 6>>* labels_out) {
  const auto rows = m.split_rows(split);
  if (rows.empty())
    throw ContractError(std::string("predict: split '") + split_name(split) +
                        "' has no samples");
  std::vector<std::array<double, 6>> preds;
  for (const auto* row : rows) {
    const auto s = load_sample(m, *row, model.modality, model.cfg.visual_len,
                               model.cfg.audio_len);
    preds.push_back(predict_sample(model, s));
    if (ids_out) ids_out->push_back(row->sample_id);
    if (labels_out) labels_out->push_back(row->labels);
  }
  return preds;
}

TrainResult run_training(Trainer& tr, const Manifest& manifest,
                         const std::string& best_path, std::ostream* progress) {
  tr.tcfg.validate();
  TrainResult res;
  res.best_val_rho = tr.sched.best;  // resumed runs keep their record
  const auto val_rows = manifest.split_rows(Split::val);
  if (val_rows.empty())
    throw ContractError("run_training: manifest has no val samples");

  for (int epoch = tr.next_epoch; epoch < tr.tcfg.max_epochs; ++epoch) {
    double loss_sum = 0;
    size_t seen = 0;
    try {
      const auto batches = make_batches(
          manifest, Split::train, tr.modality, tr.tcfg.batch_size,
          tr.tcfg.seed, uint64_t(epoch), tr.model.cfg.visual_len,
          tr.model.cfg.audio_len, true);
      for (const auto& batch : batches) {
        TapeT<Real> tp;
        std::vector<TensorT<Real>> preds;
        std::vector<Real> tgt;
        for (const auto& s : batch.samples) {
          preds.push_back(forward_sample(tp, tr.model, s));
          for (double v : s.labels) tgt.push_back(Real(v));
        }
        auto pred = stack_rows(tp, preds);
        auto target = TensorT<Real>::from_data(
            {int(batch.samples.size()), kOutputDim}, std::move(tgt));
        auto loss = mse_loss(tp, pred, target);
        const double lv = double(loss.item());
        if (!std::isfinite(lv))
          throw ContractError("training loss is non-finite at epoch " +
                              std::to_string(epoch));
        tp.backward(loss);
        adam_step(tr.adam, tr.model, tr.lr);
        loss_sum += lv * double(batch.samples.size());
        seen += batch.samples.size();
      }
    } catch (const ContractError& e) {
      res.aborted = true;
      res.abort_reason = e.what();
      if (progress)
        *progress << "aborting at epoch " << epoch << ": " << e.what() << "\n";
      return res;
    }
    const double train_loss = loss_sum / double(seen);

    const auto val_pred = predict_split(tr.model, manifest, Split::val);
    std::vector<std::array<double, 6>> val_tgt;
    for (const auto* row : val_rows) val_tgt.push_back(row->labels);
    const double val_rho = evaluate(val_pred, val_tgt).mean_rho;

    res.log.push_back({epoch, train_loss, val_rho, tr.lr});
    res.final_train_loss = train_loss;
    ++res.epochs_run;
    tr.next_epoch = epoch + 1;

    if (val_rho > res.best_val_rho) {
      res.best_val_rho = val_rho;
      res.best_epoch = epoch;
      if (!best_path.empty()) {
        auto ck = make_checkpoint(tr, false);
        save_checkpoint(best_path, ck);
      }
    }
    tr.lr = scheduler_update(tr.sched, val_rho, tr.lr, tr.tcfg.patience,
                             tr.tcfg.lr_factor);

    if (progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "epoch %3d  train_loss %.6f  val_rho %.4f  lr %.3g\n",
                    epoch, train_loss, val_rho, tr.lr);
      *progress << buf << std::flush;
    }
    if (tr.tcfg.stop_at_val_rho > 0 &&
        res.best_val_rho >= tr.tcfg.stop_at_val_rho) {
      if (progress)
        *progress << "validation target reached, stopping early\n";
      break;
    }
    if (tr.lr < tr.tcfg.lr_floor) {
      if (progress) *progress << "learning rate floor reached, stopping\n";
      break;
    }
  }
  return res;
}

}  // namespace emi
