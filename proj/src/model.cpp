#include "kinegraph/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "kinegraph/error.hpp"
#include "kinegraph/mha_gc.hpp"

namespace kinegraph {

namespace {

std::size_t reduce_dim(std::size_t c_in) { return std::max<std::size_t>(1, c_in / 8); }

std::vector<std::size_t> size_array(const Json& doc, const char* key) {
  const std::string path = std::string("/") + key;
  if (!doc.contains(key) || !doc[key].is_array()) throw SchemaError(path);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < doc[key].size(); ++i) {
    if (!doc[key][i].is_number_unsigned()) throw SchemaError(path + "/" + std::to_string(i));
    out.push_back(doc[key][i].get<std::size_t>());
  }
  return out;
}

template <typename T>
T field(const Json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc[key].get<T>();
  } catch (const Json::exception&) {
    throw SchemaError(std::string("/") + key);
  }
}

// Read-only window into the parameter vector.
struct View {
  const double* p;
  std::size_t rows, cols;
  double operator()(std::size_t r, std::size_t c) const { return p[r * cols + c]; }
};

View view(const std::vector<double>& values, const ParamSlot& s) { return {values.data() + s.offset, s.rows, s.cols}; }

// out[t][v] = in[t][v] W (+ b), frames picked at t * stride.
Features pointwise(const Features& in, View w, const double* bias, std::size_t stride = 1) {
  const std::size_t frames = strided_frames(in.frames, stride);
  Features out = Features::zeros(frames, in.joints, w.cols);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t v = 0; v < in.joints; ++v) {
      const double* x = &in.data[((t * stride) * in.joints + v) * in.channels];
      double* y = &out.data[(t * in.joints + v) * w.cols];
      if (bias)
        for (std::size_t o = 0; o < w.cols; ++o) y[o] = bias[o];
      for (std::size_t c = 0; c < in.channels; ++c) {
        const double xc = x[c];
        const double* wr = w.p + c * w.cols;
        for (std::size_t o = 0; o < w.cols; ++o) y[o] += xc * wr[o];
      }
    }
  return out;
}

// out[t][v] = sum_u A(v, u) in[t][u]
Features graph_mix(const Features& in, const Matrix& a) {
  Features out = Features::zeros(in.frames, in.joints, in.channels);
  const std::size_t c = in.channels;
  for (std::size_t t = 0; t < in.frames; ++t)
    for (std::size_t v = 0; v < in.joints; ++v) {
      double* y = &out.data[(t * in.joints + v) * c];
      for (std::size_t u = 0; u < in.joints; ++u) {
        const double w = a(v, u);
        const double* x = &in.data[(t * in.joints + u) * c];
        for (std::size_t k = 0; k < c; ++k) y[k] += w * x[k];
      }
    }
  return out;
}

// Zero-padded depthwise temporal convolution centred on t * stride.
Features depthwise_conv(const Features& in, View kernel, std::size_t dilation, std::size_t stride) {
  const std::size_t frames = strided_frames(in.frames, stride);
  const std::size_t c = in.channels;
  const long half = static_cast<long>(kernel.rows / 2);
  Features out = Features::zeros(frames, in.joints, c);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t k = 0; k < kernel.rows; ++k) {
      const long src = static_cast<long>(t * stride) + (static_cast<long>(k) - half) * static_cast<long>(dilation);
      if (src < 0 || src >= static_cast<long>(in.frames)) continue;
      const double* w = kernel.p + k * c;
      for (std::size_t v = 0; v < in.joints; ++v) {
        const double* x = &in.data[(static_cast<std::size_t>(src) * in.joints + v) * c];
        double* y = &out.data[(t * in.joints + v) * c];
        for (std::size_t ch = 0; ch < c; ++ch) y[ch] += w[ch] * x[ch];
      }
    }
  return out;
}

// Max over a centred window; out-of-range frames are ignored.
Features max_pool(const Features& in, std::size_t window, std::size_t stride) {
  const std::size_t frames = strided_frames(in.frames, stride);
  const long half = static_cast<long>(window / 2);
  Features out = Features::zeros(frames, in.joints, in.channels);
  std::fill(out.data.begin(), out.data.end(), -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < frames; ++t)
    for (long k = -half; k < static_cast<long>(window) - half; ++k) {
      const long src = static_cast<long>(t * stride) + k;
      if (src < 0 || src >= static_cast<long>(in.frames)) continue;
      for (std::size_t i = 0; i < in.joints * in.channels; ++i) {
        double& y = out.data[t * in.joints * in.channels + i];
        y = std::max(y, in.data[static_cast<std::size_t>(src) * in.joints * in.channels + i]);
      }
    }
  return out;
}

void add_into(Features& acc, const Features& x) {
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += x.data[i];
}

void relu(Features& f) {
  for (double& x : f.data) x = std::max(x, 0.0);
}

struct MsTcViews {
  std::vector<View> depthwise, pointwise;
  View pool_pointwise, skip;
};

void check_ms_tc(std::size_t frames, const MsTcConfig& cfg) {
  std::size_t pad = (cfg.pool_window - 1) / 2;
  for (std::size_t d : cfg.dilations) pad = std::max(pad, d * (cfg.kernel - 1) / 2);
  if (frames < pad + 1)
    throw Error(ErrorKind::TooShort, std::to_string(frames) + " frames but temporal padding is " + std::to_string(pad));
}

Features ms_tc_views(const Features& in, const MsTcViews& p, const MsTcConfig& cfg) {
  check_ms_tc(in.frames, cfg);
  Features sum = pointwise(in, p.skip, nullptr, cfg.stride);
  for (std::size_t b = 0; b < cfg.dilations.size(); ++b)
    add_into(sum, pointwise(depthwise_conv(in, p.depthwise[b], cfg.dilations[b], cfg.stride), p.pointwise[b], nullptr));
  add_into(sum, max_pool(pointwise(in, p.pool_pointwise, nullptr), cfg.pool_window, cfg.stride));
  return sum;
}

// Per-channel normalization over every sample, frame and joint.
void batch_norm(std::vector<Features>& batch, View scale, View shift, BatchNormStats& stats, BnMode mode,
                double eps, BatchNormStats* record) {
  const std::size_t c = batch.front().channels;
  if (mode == BnMode::Batch) {
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    double count = 0.0;
    for (const Features& f : batch) {
      for (std::size_t i = 0; i < f.data.size(); i += c)
        for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += f.data[i + ch];
      count += static_cast<double>(f.frames * f.joints);
    }
    for (double& m : mean) m /= count;
    for (const Features& f : batch)
      for (std::size_t i = 0; i < f.data.size(); i += c)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double d = f.data[i + ch] - mean[ch];
          var[ch] += d * d;
        }
    for (double& v : var) v /= count;
    stats = {std::move(mean), std::move(var)};
    if (record) *record = stats;
  }
  std::vector<double> mul(c), add(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    mul[ch] = scale.p[ch] / std::sqrt(stats.var[ch] + eps);
    add[ch] = shift.p[ch] - stats.mean[ch] * mul[ch];
  }
  for (Features& f : batch)
    for (std::size_t i = 0; i < f.data.size(); i += c)
      for (std::size_t ch = 0; ch < c; ++ch) f.data[i + ch] = f.data[i + ch] * mul[ch] + add[ch];
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::size_t ModelConfig::hops_for(std::size_t block) const {
  if (!hops.empty()) return hops.at(block);
  return block == 0 ? 4 : 1;
}

std::vector<std::size_t> ModelConfig::frame_schedule() const {
  std::vector<std::size_t> out{frames};
  for (std::size_t s : strides) out.push_back(strided_frames(out.back(), s));
  return out;
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::InvalidArgument, what); };
  if (joints == 0 || classes == 0 || in_dims == 0 || frames == 0) bad("joints, classes, in_dims and frames must be positive");
  if (channels.empty()) bad("channel schedule is empty");
  if (strides.size() != channels.size()) bad("strides must match the channel schedule");
  for (std::size_t c : channels)
    if (c == 0) bad("channel widths must be positive");
  for (std::size_t s : strides)
    if (s == 0) bad("strides must be positive");
  if (!hops.empty() && hops.size() != channels.size()) bad("hops must match the channel schedule");
  if (!(beta > 0.0 && beta < 1.0)) bad("beta must lie in (0, 1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad("lambda must be nonnegative");
  if (aux_tap < 1 || aux_tap > channels.size()) bad("aux_tap out of range");
  if (channels.size() == 9 && aux_tap % 3 != 0) bad("aux_tap must be 3, 6 or 9");
  if (tc_kernel == 0 || tc_kernel % 2 == 0) bad("temporal kernel must be odd");
  if (pool_window == 0 || pool_window % 2 == 0) bad("pool window must be odd");
  if (tc_dilations.empty()) bad("at least one dilated branch is required");
  if (!(bn_eps > 0.0)) bad("bn_eps must be positive");
  std::size_t t = frames;
  for (std::size_t b = 0; b < channels.size(); ++b) {
    check_ms_tc(t, {tc_kernel, tc_dilations, pool_window, strides[b]});
    t = strided_frames(t, strides[b]);
  }
}

Json ModelConfig::to_json() const {
  Json j;
  j["joints"] = joints;
  j["classes"] = classes;
  j["in_dims"] = in_dims;
  j["channels"] = channels;
  j["strides"] = strides;
  j["frames"] = frames;
  j["beta"] = beta;
  j["hops"] = hops;
  j["lambda"] = lambda;
  j["aux_tap"] = aux_tap;
  j["pe"] = pe == PeKind::Sinusoidal ? "sinusoidal" : "none";
  j["tc_kernel"] = tc_kernel;
  j["tc_dilations"] = tc_dilations;
  j["pool_window"] = pool_window;
  j["gamma_init"] = gamma_init;
  j["bn_eps"] = bn_eps;
  return j;
}

ModelConfig ModelConfig::from_json(const Json& doc) {
  if (!doc.is_object()) throw SchemaError("", "model config must be an object");
  ModelConfig c;
  c.joints = field<std::size_t>(doc, "joints", c.joints);
  c.classes = field<std::size_t>(doc, "classes", c.classes);
  c.in_dims = field<std::size_t>(doc, "in_dims", c.in_dims);
  if (doc.contains("channels")) c.channels = size_array(doc, "channels");
  if (doc.contains("strides")) c.strides = size_array(doc, "strides");
  c.frames = field<std::size_t>(doc, "frames", c.frames);
  c.beta = field<double>(doc, "beta", c.beta);
  if (doc.contains("hops")) c.hops = size_array(doc, "hops");
  c.lambda = field<double>(doc, "lambda", c.lambda);
  c.aux_tap = field<std::size_t>(doc, "aux_tap", c.aux_tap);
  const std::string pe = field<std::string>(doc, "pe", "sinusoidal");
  if (pe == "sinusoidal")
    c.pe = PeKind::Sinusoidal;
  else if (pe == "none")
    c.pe = PeKind::None;
  else
    throw SchemaError("/pe", "must be \"sinusoidal\" or \"none\"");
  c.tc_kernel = field<std::size_t>(doc, "tc_kernel", c.tc_kernel);
  if (doc.contains("tc_dilations")) c.tc_dilations = size_array(doc, "tc_dilations");
  c.pool_window = field<std::size_t>(doc, "pool_window", c.pool_window);
  c.gamma_init = field<double>(doc, "gamma_init", c.gamma_init);
  c.bn_eps = field<double>(doc, "bn_eps", c.bn_eps);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Layout and parameters

ModelLayout ModelLayout::build(const ModelConfig& cfg) {
  cfg.validate();
  ModelLayout l;
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    ParamSlot s{name, l.total, rows, cols};
    l.total += rows * cols;
    l.slots.push_back(s);
    return s;
  };
  const std::size_t v = cfg.joints;
  l.w0 = add("embed.w0", cfg.in_dims, cfg.channels[0]);
  l.b0 = add("embed.b0", 1, cfg.channels[0]);
  std::size_t c_in = cfg.channels[0];
  for (std::size_t b = 0; b < cfg.blocks(); ++b) {
    const std::string p = "block" + std::to_string(b + 1) + ".";
    const std::size_t c_out = cfg.channels[b];
    const std::size_t r = reduce_dim(c_in);
    BlockLayout bl;
    bl.c_in = c_in;
    bl.c_out = c_out;
    bl.stride = cfg.strides[b];
    bl.hops = cfg.hops_for(b);
    bl.query = add(p + "query", c_in, r);
    bl.key = add(p + "key", c_in, r);
    bl.w3 = add(p + "w3", 1, r);
    bl.gamma = add(p + "gamma", 1, 1);
    bl.shared = add(p + "shared", v, v);
    bl.w4 = add(p + "w4", c_in, c_out);
    bl.b4 = add(p + "b4", 1, c_out);
    bl.bn1_scale = add(p + "bn1.scale", 1, c_out);
    bl.bn1_shift = add(p + "bn1.shift", 1, c_out);
    for (std::size_t d = 0; d < cfg.tc_dilations.size(); ++d) {
      const std::string tag = p + "tc" + std::to_string(d + 1);
      bl.depthwise.push_back(add(tag + ".depthwise", cfg.tc_kernel, c_out));
      bl.pointwise.push_back(add(tag + ".pointwise", c_out, c_out));
    }
    bl.pool_pointwise = add(p + "pool.pointwise", c_out, c_out);
    bl.skip = add(p + "skip", c_out, c_out);
    bl.bn2_scale = add(p + "bn2.scale", 1, c_out);
    bl.bn2_shift = add(p + "bn2.shift", 1, c_out);
    if (c_in != c_out || bl.stride != 1) bl.residual = add(p + "residual", c_in, c_out);
    l.blocks.push_back(std::move(bl));
    c_in = c_out;
  }
  const std::size_t tap = cfg.channels[cfg.aux_tap - 1];
  l.fc_w = add("head.fc_w", c_in, cfg.classes);
  l.fc_b = add("head.fc_b", 1, cfg.classes);
  l.aux_w = add("aux.fc_w", 1, tap);
  l.aux_b = add("aux.fc_b", 1, 1);
  return l;
}

const ParamSlot& ModelLayout::find(const std::string& name) const {
  for (const ParamSlot& s : slots)
    if (s.name == name) return s;
  throw Error(ErrorKind::InvalidArgument, "no parameter named " + name);
}

Matrix ModelParams::matrix(const ParamSlot& slot) const {
  Matrix m(slot.rows, slot.cols);
  std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(slot.offset), slot.size(), m.data().begin());
  return m;
}

void ModelParams::set(const ParamSlot& slot, const Matrix& m) {
  if (m.rows() != slot.rows || m.cols() != slot.cols)
    throw Error(ErrorKind::DimensionMismatch, "parameter " + slot.name + " has a different shape");
  std::copy(m.data().begin(), m.data().end(), values.begin() + static_cast<std::ptrdiff_t>(slot.offset));
}

std::uint64_t ModelParams::checksum() const {
  std::uint64_t h = 14695981039346656037ull;
  for (double x : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &x, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  }
  return h;
}

Json ModelParams::to_json() const {
  Json params = Json::object();
  for (const ParamSlot& s : layout.slots)
    params[s.name] = std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(s.offset),
                                         values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size()));
  Json bn_json = Json::array();
  for (const BatchNormStats& s : bn) bn_json.push_back({{"mean", s.mean}, {"var", s.var}});
  return {{"version", 1}, {"config", cfg.to_json()}, {"params", params}, {"bn", bn_json}};
}

ModelParams ModelParams::from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("version") || doc["version"] != 1) throw SchemaError("/version");
  if (!doc.contains("config")) throw SchemaError("/config");
  ModelParams p;
  p.cfg = ModelConfig::from_json(doc["config"]);
  p.layout = ModelLayout::build(p.cfg);
  p.values.assign(p.layout.total, 0.0);
  if (!doc.contains("params") || !doc["params"].is_object()) throw SchemaError("/params");
  for (const ParamSlot& s : p.layout.slots) {
    const std::string path = "/params/" + s.name;
    if (!doc["params"].contains(s.name)) throw SchemaError(path);
    const Json& arr = doc["params"][s.name];
    if (!arr.is_array() || arr.size() != s.size()) throw SchemaError(path, "expected " + std::to_string(s.size()) + " values");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!arr[i].is_number()) throw SchemaError(path + "/" + std::to_string(i));
      p.values[s.offset + i] = arr[i].get<double>();
    }
  }
  if (!doc.contains("bn") || !doc["bn"].is_array() || doc["bn"].size() != 2 * p.cfg.blocks()) throw SchemaError("/bn");
  for (std::size_t i = 0; i < doc["bn"].size(); ++i) {
    const std::size_t c = p.cfg.channels[i / 2];
    const Json& e = doc["bn"][i];
    BatchNormStats s;
    try {
      s.mean = e.at("mean").get<std::vector<double>>();
      s.var = e.at("var").get<std::vector<double>>();
    } catch (const Json::exception&) {
      throw SchemaError("/bn/" + std::to_string(i));
    }
    if (s.mean.size() != c || s.var.size() != c) throw SchemaError("/bn/" + std::to_string(i), "wrong width");
    p.bn.push_back(std::move(s));
  }
  return p;
}

ModelParams ModelParams::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

std::size_t parameter_count(const ModelConfig& cfg) { return ModelLayout::build(cfg).total; }

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  p.cfg = cfg;
  p.layout = ModelLayout::build(cfg);
  p.values.assign(p.layout.total, 0.0);
  std::mt19937_64 rng(seed);
  auto uniform = [&](const ParamSlot& s, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < s.size(); ++i) p.values[s.offset + i] = dist(rng);
  };
  auto fill = [&](const ParamSlot& s, double x) {
    std::fill_n(p.values.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), x);
  };
  const ModelLayout& l = p.layout;
  uniform(l.w0, cfg.in_dims);
  const Matrix shared = normalized_physical_adjacency(cfg.joints);
  for (const BlockLayout& b : l.blocks) {
    uniform(b.query, b.c_in);
    uniform(b.key, b.c_in);
    uniform(b.w3, b.w3.cols);
    fill(b.gamma, cfg.gamma_init);
    p.set(b.shared, shared);
    uniform(b.w4, b.c_in);
    fill(b.bn1_scale, 1.0);
    for (std::size_t d = 0; d < b.depthwise.size(); ++d) {
      uniform(b.depthwise[d], cfg.tc_kernel);
      uniform(b.pointwise[d], b.c_out);
    }
    uniform(b.pool_pointwise, b.c_out);
    uniform(b.skip, b.c_out);
    fill(b.bn2_scale, 1.0);
    if (b.residual) uniform(*b.residual, b.c_in);
    p.bn.push_back({std::vector<double>(b.c_out, 0.0), std::vector<double>(b.c_out, 1.0)});
    p.bn.push_back({std::vector<double>(b.c_out, 0.0), std::vector<double>(b.c_out, 1.0)});
  }
  uniform(l.fc_w, l.fc_w.rows);
  uniform(l.aux_w, l.aux_w.cols);
  return p;
}

// ---------------------------------------------------------------------------
// Layers

Features Features::zeros(std::size_t frames, std::size_t joints, std::size_t channels) {
  return {frames, joints, channels, std::vector<double>(frames * joints * channels, 0.0)};
}

Matrix Features::pool_time() const {
  Matrix m(joints, channels);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t i = 0; i < joints * channels; ++i) m.data()[i] += data[t * joints * channels + i];
  m *= 1.0 / static_cast<double>(frames);
  return m;
}

Matrix sinusoidal_pe(std::size_t joints, std::size_t channels) {
  Matrix pe(joints, channels);
  for (std::size_t v = 0; v < joints; ++v)
    for (std::size_t i = 0; i < channels; i += 2) {
      const double angle =
          static_cast<double>(v) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(channels));
      pe(v, i) = std::sin(angle);
      if (i + 1 < channels) pe(v, i + 1) = std::cos(angle);
    }
  return pe;
}

Features embed_input(const SkeletonSequence& x, const Matrix& w0, const Matrix& pe, const std::vector<double>& bias) {
  if (w0.rows() != x.dims) throw Error(ErrorKind::DimensionMismatch, "W0 rows must equal the coordinate dimension");
  if (pe.rows() != x.joints || pe.cols() != w0.cols())
    throw Error(ErrorKind::DimensionMismatch, "PE must be V x C1");
  if (!bias.empty() && bias.size() != w0.cols()) throw Error(ErrorKind::DimensionMismatch, "embedding bias width");
  Features f = Features::zeros(x.frames, x.joints, w0.cols());
  for (std::size_t t = 0; t < x.frames; ++t)
    for (std::size_t v = 0; v < x.joints; ++v)
      for (std::size_t o = 0; o < w0.cols(); ++o) {
        double acc = pe(v, o) + (bias.empty() ? 0.0 : bias[o]);
        for (std::size_t k = 0; k < x.dims; ++k) acc += x.at(t, v, k) * w0(k, o);
        f.at(t, v, o) = acc;
      }
  return f;
}

std::size_t strided_frames(std::size_t frames, std::size_t stride) { return (frames + stride - 1) / stride; }

Features ms_tc_forward(const Features& input, const MsTcParams& params, const MsTcConfig& cfg) {
  const std::size_t c = input.channels;
  if (params.depthwise.size() != cfg.dilations.size() || params.pointwise.size() != cfg.dilations.size())
    throw Error(ErrorKind::DimensionMismatch, "one depthwise and one pointwise kernel per dilation");
  auto as_view = [&](const Matrix& m, std::size_t rows) {
    if (m.rows() != rows || m.cols() != c) throw Error(ErrorKind::DimensionMismatch, "temporal kernel shape");
    return View{m.data().data(), m.rows(), m.cols()};
  };
  MsTcViews v{{}, {}, as_view(params.pool_pointwise, c), as_view(params.skip, c)};
  for (std::size_t b = 0; b < cfg.dilations.size(); ++b) {
    v.depthwise.push_back(as_view(params.depthwise[b], cfg.kernel));
    v.pointwise.push_back(as_view(params.pointwise[b], c));
  }
  return ms_tc_views(input, v, cfg);
}

// ---------------------------------------------------------------------------
// Forward pass

EncoderState embed_batch(const std::vector<SkeletonSequence>& batch, const ModelParams& params) {
  const ModelConfig& cfg = params.cfg;
  const ModelLayout& l = params.layout;
  if (batch.empty()) throw Error(ErrorKind::EmptySampleSet, "empty batch");
  if (params.values.size() != l.total) throw Error(ErrorKind::DimensionMismatch, "parameter vector length");
  for (const SkeletonSequence& s : batch)
    if (s.frames != cfg.frames || s.joints != cfg.joints || s.dims != cfg.in_dims)
      throw Error(ErrorKind::DimensionMismatch, "sequence is " + std::to_string(s.frames) + "x" +
                                                    std::to_string(s.joints) + "x" + std::to_string(s.dims) +
                                                    ", model expects " + std::to_string(cfg.frames) + "x" +
                                                    std::to_string(cfg.joints) + "x" + std::to_string(cfg.in_dims));
  const Matrix pe = cfg.pe == PeKind::Sinusoidal ? sinusoidal_pe(cfg.joints, cfg.channels[0])
                                                 : Matrix(cfg.joints, cfg.channels[0]);
  const Matrix w0 = params.matrix(l.w0);
  const Matrix b0 = params.matrix(l.b0);
  const std::vector<double> bias(b0.data().begin(), b0.data().end());
  EncoderState state;
  state.x.reserve(batch.size());
  for (const SkeletonSequence& s : batch) state.x.push_back(embed_input(s, w0, pe, bias));
  state.theta.resize(batch.size());
  return state;
}

void run_blocks(EncoderState& state, const ModelParams& params, const ForwardOptions& opts, std::size_t until) {
  const ModelConfig& cfg = params.cfg;
  const ModelLayout& l = params.layout;
  const auto& values = params.values;
  if (until > l.blocks.size()) throw Error(ErrorKind::InvalidArgument, "block index past the encoder");
  if (opts.record_stats && opts.record_stats->size() != 2 * l.blocks.size())
    opts.record_stats->assign(2 * l.blocks.size(), {});
  std::vector<Features>& x = state.x;

  for (std::size_t b = state.blocks_done; b < until; ++b) {
    const BlockLayout& bl = l.blocks[b];
    AttentionParams ap{params.matrix(bl.shared), values[bl.gamma.offset], params.matrix(bl.query),
                       params.matrix(bl.key),
                       std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(bl.w3.offset),
                                           values.begin() + static_cast<std::ptrdiff_t>(bl.w3.offset + bl.w3.size()))};
    const MsTcConfig tc{cfg.tc_kernel, cfg.tc_dilations, cfg.pool_window, bl.stride};
    MsTcViews tv{{}, {}, view(values, bl.pool_pointwise), view(values, bl.skip)};
    for (std::size_t d = 0; d < bl.depthwise.size(); ++d) {
      tv.depthwise.push_back(view(values, bl.depthwise[d]));
      tv.pointwise.push_back(view(values, bl.pointwise[d]));
    }
    BatchNormStats bn1 = params.bn[2 * b], bn2 = params.bn[2 * b + 1];

    std::vector<Features> g(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
      const Matrix a_bar = one_hop_attention(x[n].pool_time(), ap).a_bar;
      const Matrix a_script = multi_hop_exact(a_bar, cfg.beta, bl.hops);
      g[n] = pointwise(graph_mix(x[n], a_script), view(values, bl.w4), values.data() + bl.b4.offset);
    }
    batch_norm(g, view(values, bl.bn1_scale), view(values, bl.bn1_shift), bn1, opts.bn, cfg.bn_eps,
               opts.record_stats ? &(*opts.record_stats)[2 * b] : nullptr);
    for (Features& f : g) relu(f);

    std::vector<Features> m(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) m[n] = ms_tc_views(g[n], tv, tc);
    batch_norm(m, view(values, bl.bn2_scale), view(values, bl.bn2_shift), bn2, opts.bn, cfg.bn_eps,
               opts.record_stats ? &(*opts.record_stats)[2 * b + 1] : nullptr);

    for (std::size_t n = 0; n < x.size(); ++n) {
      if (bl.residual)
        add_into(m[n], pointwise(x[n], view(values, *bl.residual), nullptr, bl.stride));
      else
        add_into(m[n], x[n]);
      relu(m[n]);
      x[n] = std::move(m[n]);
      if (b + 1 == cfg.aux_tap) state.theta[n] = x[n].pool_time();
    }
    state.blocks_done = b + 1;
  }
}

ForwardResult apply_heads(const EncoderState& state, const ModelParams& params, const ForwardOptions& opts) {
  const ModelConfig& cfg = params.cfg;
  const ModelLayout& l = params.layout;
  const auto& values = params.values;
  if (state.blocks_done != l.blocks.size()) throw Error(ErrorKind::InvalidArgument, "encoder has not finished");
  if (opts.templates && (opts.templates->joints() != cfg.joints || opts.templates->classes() != cfg.classes))
    throw Error(ErrorKind::DimensionMismatch, "class templates do not match the model");

  ForwardResult out;
  out.logits = Matrix(state.x.size(), cfg.classes);
  const View fc = view(values, l.fc_w);
  for (std::size_t n = 0; n < state.x.size(); ++n) {
    const Features& f = state.x[n];
    std::vector<double> pooled(f.channels, 0.0);
    for (std::size_t i = 0; i < f.data.size(); i += f.channels)
      for (std::size_t c = 0; c < f.channels; ++c) pooled[c] += f.data[i + c];
    for (double& p : pooled) p /= static_cast<double>(f.frames * f.joints);
    for (std::size_t k = 0; k < cfg.classes; ++k) {
      double acc = values[l.fc_b.offset + k];
      for (std::size_t c = 0; c < f.channels; ++c) acc += pooled[c] * fc(c, k);
      out.logits(n, k) = acc;
    }
  }
  if (opts.templates) {
    out.aux_logits = Matrix(state.x.size(), cfg.classes);
    const std::span<const double> w(values.data() + l.aux_w.offset, l.aux_w.size());
    for (std::size_t n = 0; n < state.x.size(); ++n) {
      const auto z = pcac_logits(state.theta[n], *opts.templates, w, values[l.aux_b.offset]);
      std::copy(z.begin(), z.end(), out.aux_logits->row(n).begin());
    }
  }
  out.theta = state.theta;
  return out;
}

ForwardResult model_forward(const std::vector<SkeletonSequence>& batch, const ModelParams& params,
                            const ForwardOptions& opts) {
  if (opts.templates && (opts.templates->joints() != params.cfg.joints ||
                         opts.templates->classes() != params.cfg.classes))
    throw Error(ErrorKind::DimensionMismatch, "class templates do not match the model");
  EncoderState state = embed_batch(batch, params);
  run_blocks(state, params, opts, params.layout.blocks.size());
  return apply_heads(state, params, opts);
}

// ---------------------------------------------------------------------------
// Heads, losses and fusion

std::vector<double> pcac_logits(const Matrix& theta, const ClassTemplateSet& templates, std::span<const double> w,
                                double bias) {
  const std::size_t v = theta.rows();
  if (templates.joints() != v) throw Error(ErrorKind::DimensionMismatch, "template joint count differs from theta");
  if (w.size() != theta.cols()) throw Error(ErrorKind::DimensionMismatch, "PC-AC weight width differs from theta");
  // Project channels first: (T-C theta) w = T-C (theta w).
  std::vector<double> projected(v, 0.0);
  for (std::size_t u = 0; u < v; ++u)
    for (std::size_t c = 0; c < theta.cols(); ++c) projected[u] += theta(u, c) * w[c];
  std::vector<double> out;
  out.reserve(templates.classes());
  for (const Matrix& tc : templates.templates) {
    double acc = 0.0;
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t u = 0; u < v; ++u) acc += tc(i, u) * projected[u];
    out.push_back(acc / static_cast<double>(v) + bias);
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - top);
  for (double& x : out) x /= sum;
  return out;
}

double aux_loss(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw Error(ErrorKind::InvalidArgument, "label out of range");
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - top);
  return std::log(sum) - (logits[label] - top);
}

Json LossBreakdown::to_json() const {
  return {{"primary", primary}, {"aux", aux}, {"lambda", lambda}, {"total", total}};
}

LossBreakdown total_loss(double primary, double aux, double lambda) {
  return {primary, aux, lambda, primary + lambda * aux};
}

LossBreakdown batch_loss(const ForwardResult& out, const std::vector<std::size_t>& labels, double lambda) {
  if (labels.size() != out.logits.rows()) throw Error(ErrorKind::DimensionMismatch, "one label per sample");
  double primary = 0.0, aux = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    primary += aux_loss(out.logits.row(n), labels[n]);
    if (out.aux_logits) aux += aux_loss(out.aux_logits->row(n), labels[n]);
  }
  const double count = static_cast<double>(labels.size());
  return total_loss(primary / count, aux / count, lambda);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

EnsembleResult ensemble_scores(const std::vector<Matrix>& streams) {
  if (streams.empty()) throw Error(ErrorKind::ShapeMismatch, "no score streams");
  const std::size_t n = streams.front().rows(), m = streams.front().cols();
  if (m == 0) throw Error(ErrorKind::ShapeMismatch, "streams have no classes");
  for (std::size_t s = 1; s < streams.size(); ++s)
    if (streams[s].rows() != n || streams[s].cols() != m)
      throw Error(ErrorKind::ShapeMismatch, "stream " + std::to_string(s) + " is " +
                                                std::to_string(streams[s].rows()) + "x" +
                                                std::to_string(streams[s].cols()) + ", expected " +
                                                std::to_string(n) + "x" + std::to_string(m));
  EnsembleResult r{Matrix(n, m), {}};
  for (const Matrix& s : streams)
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = softmax(s.row(i));
      for (std::size_t k = 0; k < m; ++k) r.fused(i, k) += p[k];
    }
  for (std::size_t i = 0; i < n; ++i) r.predictions.push_back(argmax(r.fused.row(i)));
  return r;
}

}  // namespace kinegraph
