#include "udit/serde.hpp"

namespace udit {

Json hyper_to_json(const nets::NetHyper& h) {
  Json j;
  j["image_size"] = h.image_size;
  j["in_channels"] = h.in_channels;
  j["base_channels"] = h.base_channels;
  j["style_dim"] = h.style_dim;
  j["n_res"] = h.n_res;
  j["stem_kernel"] = h.stem_kernel;
  j["res_kernel"] = h.res_kernel;
  j["style_down_kernel"] = h.style_down_kernel;
  j["n_scales"] = h.n_scales;
  j["d_base_channels"] = h.d_base_channels;
  j["d_layers"] = h.d_layers;
  j["use_pooling_indices"] = h.use_pooling_indices;
  return j;
}

nets::NetHyper hyper_from_json(const Json& j) {
  nets::NetHyper h;
  h.image_size = json_get<int>(j, "image_size");
  h.in_channels = json_get<int>(j, "in_channels");
  h.base_channels = json_get<int>(j, "base_channels");
  h.style_dim = json_get<int>(j, "style_dim");
  h.n_res = json_get<int>(j, "n_res");
  h.stem_kernel = json_get<int>(j, "stem_kernel");
  h.res_kernel = json_get<int>(j, "res_kernel");
  h.style_down_kernel = json_get<int>(j, "style_down_kernel");
  h.n_scales = json_get<int>(j, "n_scales");
  h.d_base_channels = json_get<int>(j, "d_base_channels");
  h.d_layers = json_get<int>(j, "d_layers");
  h.use_pooling_indices = json_get<bool>(j, "use_pooling_indices");
  h.validate();
  return h;
}

Json weights_to_json(const losses::LossWeights& w) {
  Json j;
  j["lambda_x"] = w.lambda_x;
  j["lambda_c"] = w.lambda_c;
  j["lambda_s"] = w.lambda_s;
  j["lambda_u"] = w.lambda_u;
  return j;
}

losses::LossWeights weights_from_json(const Json& j) {
  losses::LossWeights w;
  w.lambda_x = json_get<double>(j, "lambda_x");
  w.lambda_c = json_get<double>(j, "lambda_c");
  w.lambda_s = json_get<double>(j, "lambda_s");
  w.lambda_u = json_get<double>(j, "lambda_u");
  w.validate();
  return w;
}

Json json_parse(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    fail<ConfigError>(what, ": invalid JSON: ", e.what());
  }
}

}  // namespace udit
