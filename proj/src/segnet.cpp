#include "elsnet/segnet.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "elsnet/ops.hpp"
#include "elsnet/rng.hpp"

namespace elsnet {

using nlohmann::json;

void SegNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("segnet.in_channels must be >= 1");
  if (num_outputs < 2) throw ConfigError("segnet.num_outputs must be >= 2");
  if (widths.empty()) throw ConfigError("segnet.widths must name at least one level");
  for (int w : widths)
    if (w < 1) throw ConfigError("segnet.widths entries must be >= 1");
  if (embed_channels < 1) throw ConfigError("segnet.embed_channels must be >= 1");
  const std::size_t f = std::size_t{1} << depth();
  if (height % f != 0 || width % f != 0 || height < f || width < f)
    throw ConfigError("segnet: image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by 2^" + std::to_string(depth()));
}

void to_json(json& j, const SegNetConfig& c) {
  j = json{{"in_channels", c.in_channels}, {"num_outputs", c.num_outputs},
           {"height", c.height},           {"width", c.width},
           {"widths", c.widths},           {"embed_channels", c.embed_channels}};
}

void from_json(const json& j, SegNetConfig& c) {
  c.in_channels = j.value("in_channels", c.in_channels);
  c.num_outputs = j.value("num_outputs", c.num_outputs);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.widths = j.value("widths", c.widths);
  c.embed_channels = j.value("embed_channels", c.embed_channels);
}

namespace {

struct Shape {
  std::string name;
  Dims dims;
  enum Kind { ConvWeight, One, Zero } kind;
};

// Parameter layout in declaration order; names are stable checkpoint keys.
std::vector<Shape> layout(const SegNetConfig& c) {
  std::vector<Shape> out;
  auto conv = [&](const std::string& prefix, int cin, int cout) {
    const auto co = static_cast<std::size_t>(cout);
    out.push_back({prefix + ".weight", {co, static_cast<std::size_t>(cin), 3, 3}, Shape::ConvWeight});
    out.push_back({prefix + ".norm_scale", {co}, Shape::One});
    out.push_back({prefix + ".norm_shift", {co}, Shape::Zero});
  };
  const std::size_t d = c.depth();
  for (std::size_t l = 0; l < d; ++l) conv("enc" + std::to_string(l), l == 0 ? c.in_channels : c.widths[l - 1], c.widths[l]);
  conv("bottleneck", c.widths[d - 1], c.embed_channels);
  for (std::size_t l = d; l-- > 0;) {
    const int from_below = l + 1 == d ? c.embed_channels : c.widths[l + 1];
    conv("dec" + std::to_string(l), from_below + c.widths[l], c.widths[l]);
  }
  const auto k = static_cast<std::size_t>(c.num_outputs);
  out.push_back({"head.weight", {k, static_cast<std::size_t>(c.widths[0]), 1, 1}, Shape::ConvWeight});
  out.push_back({"head.bias", {k}, Shape::Zero});
  return out;
}

}  // namespace

template <typename T>
SegNetwork<T>::SegNetwork(SegNetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, std::string_view("segnet.init")));
  for (const Shape& s : layout(config_)) {
    std::vector<T> v(numel_of(s.dims), T(0));
    if (s.kind == Shape::One) std::fill(v.begin(), v.end(), T(1));
    if (s.kind == Shape::ConvWeight) {
      const double bound = std::sqrt(6.0 / static_cast<double>(s.dims[1] * s.dims[2] * s.dims[3]));
      for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    }
    params_.emplace_back(s.name, TensorT::from(s.dims, std::move(v)));
  }
  build_layout();
  set_requires_grad(true);
}

template <typename T>
SegNetwork<T>::SegNetwork(SegNetConfig config, std::vector<Param> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto shapes = layout(config_);
  if (shapes.size() != params_.size())
    throw DimensionError("segnet: expected " + std::to_string(shapes.size()) + " parameters, got " +
                         std::to_string(params_.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].name != params_[i].first)
      throw DimensionError("segnet: parameter " + std::to_string(i) + " is '" + params_[i].first + "', expected '" +
                           shapes[i].name + "'");
    if (shapes[i].dims != params_[i].second.dims())
      throw DimensionError("segnet: parameter " + shapes[i].name + " has dims " +
                           dims_to_string(params_[i].second.dims()) + ", expected " +
                           dims_to_string(shapes[i].dims));
  }
  build_layout();
}

template <typename T>
void SegNetwork<T>::build_layout() {
  std::size_t i = 0;
  auto take = [&] {
    Indices ix{i, i + 1, i + 2};
    i += 3;
    return ix;
  };
  const std::size_t d = config_.depth();
  enc_.clear();
  dec_.assign(d, {});
  for (std::size_t l = 0; l < d; ++l) enc_.push_back(take());
  bottleneck_ = take();
  for (std::size_t l = d; l-- > 0;) dec_[l] = take();
  head_w_ = i++;
  head_b_ = i++;
}

template <typename T>
std::size_t SegNetwork<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.second.numel();
  return n;
}

template <typename T>
const BasicTensor<T>& SegNetwork<T>::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.first == name) return p.second;
  throw ContractError("segnet has no parameter named " + name);
}

template <typename T>
BasicTensor<T> SegNetwork<T>::block(const TensorT& x, const Indices& layer, bool activate) const {
  const TensorT& w = params_[layer.w].second;
  // Instance norm removes any per-channel constant, so the conv carries no bias.
  const TensorT no_bias = TensorT::zeros({w.dim(0)});
  TensorT y = ops::conv2d(x, w, no_bias, 1, 1);
  y = ops::instance_norm(y, params_[layer.gamma].second, params_[layer.beta].second);
  return activate ? ops::relu(y) : y;
}

template <typename T>
Features<T> SegNetwork<T>::encode_features(const TensorT& image) const {
  const Dims want{static_cast<std::size_t>(config_.in_channels), config_.height, config_.width};
  if (image.dims() != want)
    throw DimensionError("encode: image dims " + dims_to_string(image.dims()) + " do not match network input " +
                         dims_to_string(want));
  Features<T> f;
  TensorT h = image;
  for (const Indices& layer : enc_) {
    h = block(h, layer, true);
    f.skips.push_back(h);
    h = ops::max_pool2d(h);
  }
  f.embedding = block(h, bottleneck_, true);
  return f;
}

template <typename T>
BasicTensor<T> SegNetwork<T>::decode(const Features<T>& features) const {
  const Dims want{static_cast<std::size_t>(config_.embed_channels), config_.embed_height(), config_.embed_width()};
  if (features.embedding.dims() != want)
    throw DimensionError("decode: embedding dims " + dims_to_string(features.embedding.dims()) +
                         " do not match " + dims_to_string(want));
  if (features.skips.size() != config_.depth())
    throw DimensionError("decode: expected " + std::to_string(config_.depth()) + " skip maps");
  TensorT h = features.embedding;
  for (std::size_t l = config_.depth(); l-- > 0;) {
    const TensorT& skip = features.skips[l];
    h = ops::bilinear_resize(h, skip.dim(1), skip.dim(2));
    h = block(ops::concat_channels<T>({h, skip}), dec_[l], true);
  }
  return ops::conv2d(h, params_[head_w_].second, params_[head_b_].second, 1, 0);
}

template <typename T>
SegNetwork<T> SegNetwork<T>::clone() const {
  std::vector<Param> out;
  for (const auto& [name, t] : params_) {
    TensorT c = t.detach();
    c.set_requires_grad(t.requires_grad());
    out.emplace_back(name, c);
  }
  return SegNetwork(config_, std::move(out));
}

template <typename T>
void SegNetwork<T>::set_requires_grad(bool on) {
  for (auto& p : params_) p.second.set_requires_grad(on);
}

template <typename T>
void SegNetwork<T>::zero_grad() {
  for (auto& p : params_) p.second.zero_grad();
}

template <typename T>
std::uint64_t SegNetwork<T>::weights_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params_) {
    h = fnv1a64(name, h);
    const auto d = t.data();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(T)), h);
  }
  return h;
}

template <typename T>
Mask argmax_mask(const BasicTensor<T>& logits) {
  if (logits.ndim() != 3) throw DimensionError("argmax_mask: logits must be [K,H,W]");
  const std::size_t K = logits.dim(0), H = logits.dim(1), W = logits.dim(2), P = H * W;
  if (K > 256) throw DimensionError("argmax_mask: more than 256 channels");
  Mask m(H, W, 0);
  const auto v = logits.data();
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (v[k * P + p] > v[best * P + p]) best = k;
    m.labels[p] = static_cast<std::uint8_t>(best);
  }
  return m;
}

template <typename T>
std::pair<BasicTensor<T>, Mask> predict_mask(const SegNetwork<T>& net, const Image& image) {
  NoGradGuard guard;
  BasicTensor<T> logits = net.forward(image.to_tensor<T>());
  Mask m = argmax_mask(logits);
  return {logits, std::move(m)};
}

Mask NetworkSegmenter::predict(const Sample& sample) const { return predict_mask(*net_, sample.image).second; }

std::string NetworkSegmenter::describe() const {
  char buf[40];
  std::snprintf(buf, sizeof buf, "network:%016llx", static_cast<unsigned long long>(net_->weights_hash()));
  return buf;
}

template class SegNetwork<float>;
template class SegNetwork<double>;
template Mask argmax_mask(const BasicTensor<float>&);
template Mask argmax_mask(const BasicTensor<double>&);
template std::pair<BasicTensor<float>, Mask> predict_mask(const SegNetwork<float>&, const Image&);
template std::pair<BasicTensor<double>, Mask> predict_mask(const SegNetwork<double>&, const Image&);

}  // namespace elsnet
