// SPDX-License-Identifier: Apache-2.0

#include "morphctl/checkpoint.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace morphctl {
namespace {

template <typename T>
T ToLittle(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

Matrix Row(const Vector& v) { return v.transpose(); }

Matrix Scalar(double x) {
  Matrix m(1, 1);
  m(0, 0) = x;
  return m;
}

}  // namespace

void SaveCheckpoint(const std::string& path, const TrainerState& st) {
  std::vector<Matrix> owned;
  owned.reserve(16);
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  for (const Parameter& p : st.net.params()) tensors.emplace_back(p.name, &p.value);
  if (!st.adam.m.empty()) {
    int i = 0;
    for (const Parameter& p : st.net.params()) {
      tensors.emplace_back("adam.m." + p.name, &st.adam.m[i]);
      tensors.emplace_back("adam.v." + p.name, &st.adam.v[i]);
      ++i;
    }
  }
  auto own = [&](const std::string& name, Matrix m) {
    owned.push_back(std::move(m));
    tensors.emplace_back(name, nullptr);
  };
  own("norm.obs.local.mean", Row(st.obs_norm.local.mean()));
  own("norm.obs.local.var", Row(st.obs_norm.local.var()));
  own("norm.obs.local.count", Scalar(st.obs_norm.local.count()));
  own("norm.obs.global.mean", Row(st.obs_norm.global.mean()));
  own("norm.obs.global.var", Row(st.obs_norm.global.var()));
  own("norm.obs.global.count", Scalar(st.obs_norm.global.count()));
  own("norm.ret.mean", Row(st.ret_norm.mean()));
  own("norm.ret.var", Row(st.ret_norm.var()));
  own("norm.ret.count", Scalar(st.ret_norm.count()));
  {
    const auto& ema = st.balancer.ema();
    Matrix m(1, static_cast<Eigen::Index>(ema.size()));
    for (std::size_t i = 0; i < ema.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = ema[i];
    own("balancer.ema", std::move(m));
  }
  // Resolve owned pointers now that the vector no longer reallocates.
  std::size_t next_owned = 0;
  for (auto& [name, ptr] : tensors) {
    if (!ptr) ptr = &owned[next_owned++];
  }

  nlohmann::ordered_json header;
  header["layout_version"] = kLayoutVersion;
  header["iteration"] = st.iteration;
  header["adam_step"] = st.adam.step;
  header["balancer_iteration"] = st.balancer.iteration();
  header["robots"] = st.robot_ids;
  header["config"] = ToJson(st.config);
  nlohmann::ordered_json dir = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : tensors) {
    dir.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m->size());
  }
  header["tensors"] = dir;
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    out.write(kCheckpointMagic, 8);
    const std::uint64_t len = ToLittle<std::uint64_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : tensors) {
      for (Eigen::Index i = 0; i < m->size(); ++i) {
        const double v = ToLittle(m->data()[i]);
        out.write(reinterpret_cast<const char*>(&v), 8);
      }
    }
    if (!out) throw CheckpointError("write failed for checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

TrainerState LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  len = ToLittle(len);
  if (!in || len > (1ULL << 30)) throw CheckpointError("corrupt checkpoint header in '" + path + "'");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated checkpoint header in '" + path + "'");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError("corrupt checkpoint header in '" + path + "': " + e.what());
  }
  const int layout = header.at("layout_version").get<int>();
  if (layout != kLayoutVersion) {
    throw CheckpointError("checkpoint '" + path + "' has observation layout version " +
                          std::to_string(layout) + ", this build expects " +
                          std::to_string(kLayoutVersion));
  }

  std::vector<double> data;
  {
    const auto start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::uint64_t>(in.tellg() - start);
    in.seekg(start);
    if (bytes % 8 != 0) throw CheckpointError("checkpoint '" + path + "' has a ragged data section");
    data.resize(bytes / 8);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    for (double& d : data) d = ToLittle(d);
  }
  std::map<std::string, Matrix> tensors;
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto rows = t.at("shape").at(0).get<Eigen::Index>();
    const auto cols = t.at("shape").at(1).get<Eigen::Index>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    if (offset + static_cast<std::uint64_t>(rows * cols) > data.size()) {
      throw CheckpointError("tensor '" + name + "' runs past the end of '" + path + "'");
    }
    Matrix m(rows, cols);
    std::memcpy(m.data(), data.data() + offset, static_cast<std::size_t>(rows * cols) * 8);
    tensors.emplace(name, std::move(m));
  }
  auto take = [&](const std::string& name) -> Matrix& {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw CheckpointError("checkpoint '" + path + "' is missing tensor '" + name + "'");
    }
    return it->second;
  };

  TrainerState st;
  st.config = FromJson(header.at("config"), TrainConfig::Full());
  st.iteration = header.at("iteration").get<int>();
  st.robot_ids = header.at("robots").get<std::vector<std::string>>();
  st.net = ActorCritic(st.config.Policy(), 0);
  for (Parameter& p : st.net.params()) {
    const Matrix& m = take(p.name);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", model expects " +
                            std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    p.value = m;
  }
  st.adam.step = header.at("adam_step").get<long>();
  if (tensors.count("adam.m." + st.net.params()[0].name)) {
    for (const Parameter& p : st.net.params()) {
      st.adam.m.push_back(take("adam.m." + p.name));
      st.adam.v.push_back(take("adam.v." + p.name));
    }
  }
  auto vec = [&](const std::string& name) -> Vector { return take(name).row(0).transpose(); };
  st.obs_norm = ObsNormalizers(kLocalWidth, st.config.Policy().global_width,
                               st.config.observation_clip, st.config.observation_normalization);
  st.obs_norm.local.SetState(vec("norm.obs.local.mean"), vec("norm.obs.local.var"),
                             take("norm.obs.local.count")(0, 0));
  st.obs_norm.global.SetState(vec("norm.obs.global.mean"), vec("norm.obs.global.var"),
                              take("norm.obs.global.count")(0, 0));
  st.ret_norm = RunningNormalizer(1, 1e300);
  st.ret_norm.SetState(vec("norm.ret.mean"), vec("norm.ret.var"), take("norm.ret.count")(0, 0));
  const Vector ema = vec("balancer.ema");
  st.balancer = PerformanceTracker(static_cast<int>(st.robot_ids.size()), st.config.Balancer());
  st.balancer.Restore(std::vector<double>(ema.data(), ema.data() + ema.size()),
                      header.at("balancer_iteration").get<int>());
  return st;
}

}  // namespace morphctl
