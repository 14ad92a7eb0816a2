#include "selftransfer/checkpoint.hpp"

#include "json.hpp"

#include <fstream>

namespace selftransfer {

using nlohmann::json;

namespace {

json matrix_json(const Matrix& m) {
  json data = json::array();
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from(const json& j) {
  const Index rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols)
    throw Error("checkpoint: matrix size does not match its data");
  Matrix m(rows, cols);
  Index k = 0;
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = data[static_cast<std::size_t>(k++)].get<Scalar>();
  return m;
}

Vector vector_from(const json& j) {
  Matrix m = matrix_from(j);
  if (m.cols() != 1) throw Error("checkpoint: expected a column vector");
  return m.col(0);
}

json network_json(const Network& net) {
  json layers = json::array();
  for (const auto& layer : net.layers) {
    if (const auto* l = std::get_if<LstmLayer>(&layer)) {
      layers.push_back({{"type", "lstm"},
                        {"w_input", matrix_json(l->w_input)},
                        {"w_recurrent", matrix_json(l->w_recurrent)},
                        {"bias", matrix_json(l->bias)}});
    } else {
      const auto& d = std::get<DenseLayer>(layer);
      layers.push_back({{"type", "dense"},
                        {"activation", d.activation == Activation::relu ? "relu" : "identity"},
                        {"weight", matrix_json(d.weight)},
                        {"bias", matrix_json(d.bias)}});
    }
  }
  return layers;
}

Network network_from(const json& j) {
  Network net;
  for (const auto& l : j) {
    const auto type = l.at("type").get<std::string>();
    if (type == "lstm") {
      LstmLayer layer{matrix_from(l.at("w_input")), matrix_from(l.at("w_recurrent")),
                      vector_from(l.at("bias"))};
      const Index h = layer.w_recurrent.cols();
      if (layer.w_recurrent.rows() != 4 * h || layer.w_input.rows() != 4 * h ||
          layer.bias.size() != 4 * h)
        throw Error("checkpoint: inconsistent lstm layer shapes");
      net.layers.emplace_back(std::move(layer));
    } else if (type == "dense") {
      const auto act = l.at("activation").get<std::string>();
      if (act != "relu" && act != "identity") throw Error("checkpoint: unknown activation '" + act + "'");
      DenseLayer layer{matrix_from(l.at("weight")), vector_from(l.at("bias")),
                       act == "relu" ? Activation::relu : Activation::identity};
      if (layer.bias.size() != layer.weight.rows())
        throw Error("checkpoint: inconsistent dense layer shapes");
      net.layers.emplace_back(std::move(layer));
    } else {
      throw Error("checkpoint: unknown layer type '" + type + "'");
    }
  }
  return net;
}

json vectors_json(const std::vector<Vector>& vs) {
  json out = json::array();
  for (const auto& v : vs) out.push_back(std::vector<Scalar>(v.data(), v.data() + v.size()));
  return out;
}

std::vector<Vector> vectors_from(const json& j) {
  std::vector<Vector> out;
  for (const auto& a : j) {
    const auto values = a.get<std::vector<Scalar>>();
    out.push_back(Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size())));
  }
  return out;
}

}  // namespace

std::string to_string(CheckpointKind kind) {
  return kind == CheckpointKind::surrogate ? "surrogate" : "dantr";
}

std::string Checkpoint::fingerprint() const {
  return kind == CheckpointKind::surrogate ? selftransfer::fingerprint(network)
                                           : selftransfer::fingerprint(dantr);
}

Network Checkpoint::predictor() const {
  if (kind == CheckpointKind::dantr) return target_branch(dantr);
  return predict_with_teacher && teacher ? *teacher : network;
}

Checkpoint make_checkpoint(Network net) {
  Checkpoint c;
  c.kind = CheckpointKind::surrogate;
  c.network = std::move(net);
  return c;
}

Checkpoint make_checkpoint(DanTrParams params) {
  Checkpoint c;
  c.kind = CheckpointKind::dantr;
  c.dantr = std::move(params);
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& file) {
  json j;
  j["format"] = "selftransfer-checkpoint-1";
  j["kind"] = to_string(c.kind);
  j["fingerprint"] = c.fingerprint();
  if (c.kind == CheckpointKind::surrogate) {
    j["network"] = network_json(c.network);
    if (c.teacher) j["teacher"] = network_json(*c.teacher);
    j["predict_with_teacher"] = c.predict_with_teacher;
  } else {
    j["shared"] = network_json(c.dantr.shared);
    j["source"] = network_json(c.dantr.source);
    j["target"] = network_json(c.dantr.target);
  }
  if (c.optimizer) {
    const auto& cfg = c.optimizer->config();
    j["adam"] = {{"beta1", cfg.beta1},
                 {"beta2", cfg.beta2},
                 {"epsilon", cfg.epsilon},
                 {"steps", c.optimizer->steps()},
                 {"m", vectors_json(c.optimizer->first_moment())},
                 {"v", vectors_json(c.optimizer->second_moment())}};
  }
  j["rng_state"] = c.rng_state;
  j["metadata"] = c.metadata;
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw Error("checkpoint: cannot write " + file.string());
  out << j.dump() << '\n';
  if (!out) throw Error("checkpoint: write failed for " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file, const std::string& expected) {
  std::ifstream in(file);
  if (!in) throw Error("checkpoint: cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("checkpoint: " + file.string() + " is not valid JSON: " + e.what());
  }
  Checkpoint c;
  try {
    if (j.value("format", "") != "selftransfer-checkpoint-1")
      throw Error("checkpoint: unrecognized format in " + file.string());
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "surrogate") {
      c.kind = CheckpointKind::surrogate;
      c.network = network_from(j.at("network"));
      if (j.contains("teacher")) c.teacher = network_from(j.at("teacher"));
      c.predict_with_teacher = j.value("predict_with_teacher", false);
      if (c.predict_with_teacher && !c.teacher)
        throw Error("checkpoint: predict_with_teacher is set but no teacher is stored");
    } else if (kind == "dantr") {
      c.kind = CheckpointKind::dantr;
      c.dantr = {network_from(j.at("shared")), network_from(j.at("source")),
                 network_from(j.at("target"))};
    } else {
      throw Error("checkpoint: unknown kind '" + kind + "'");
    }
    if (c.fingerprint() != j.at("fingerprint").get<std::string>())
      throw Error("checkpoint: stored fingerprint does not match the stored layers");
    if (!expected.empty() && c.fingerprint() != expected)
      throw Error("checkpoint: architecture mismatch (file has " + c.fingerprint() +
                  ", expected " + expected + ")");
    if (c.teacher && fingerprint(*c.teacher) != fingerprint(c.network))
      throw Error("checkpoint: teacher and student architectures differ");
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      AdamConfig cfg{a.at("beta1").get<Scalar>(), a.at("beta2").get<Scalar>(),
                     a.at("epsilon").get<Scalar>()};
      Adam adam;
      if (c.kind == CheckpointKind::surrogate)
        adam = Adam(parameter_arrays(c.network), cfg);
      else
        adam = Adam(parameter_arrays(c.dantr), cfg);
      adam.restore(a.at("steps").get<long long>(), vectors_from(a.at("m")), vectors_from(a.at("v")));
      c.optimizer = std::move(adam);
    }
    c.rng_state = j.value("rng_state", "");
    if (j.contains("metadata")) c.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw Error("checkpoint: malformed " + file.string() + ": " + e.what());
  }
  return c;
}

}  // namespace selftransfer
