#include "dpsep/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dpsep {
namespace {

using json = nlohmann::json;
using Matrix = FrameDenoiser::Matrix;

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void write_tensor(std::ostream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) write_le(out, static_cast<float>(m.data()[i]));
}

Matrix read_tensor(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = read_le<float>(in);
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FrameDenoiser& model,
                     const CheckpointMeta& meta, const AdamState* optimizer) {
  const auto& cfg = model.config();
  json header;
  header["format"] = "dpsep-checkpoint";
  header["version"] = kCheckpointVersion;
  header["role"] = meta.role;
  header["signal_len"] = meta.signal_len;
  header["sigma_data"] = model.sigma_data();
  header["architecture"] = {{"frame_len", cfg.frame_len},   {"hidden", cfg.hidden},
                            {"res_blocks", cfg.res_blocks}, {"emb_hidden", cfg.emb_hidden},
                            {"fourier", cfg.fourier},       {"cond_dim", cfg.cond_dim}};
  header["schedule"] = {{"sigma_max", meta.sigma_max},
                        {"sigma_min", meta.sigma_min},
                        {"rho", meta.rho},
                        {"n_steps", meta.n_steps}};
  header["optimizer_step"] = optimizer ? optimizer->step : 0;
  header["has_optimizer_state"] = optimizer != nullptr;
  json tensors = json::array();
  const auto& names = model.param_names();
  const auto& params = model.params();
  auto table = [&](const std::string& prefix) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      tensors.push_back({{"name", prefix + names[i]},
                         {"rows", params[i].rows()},
                         {"cols", params[i].cols()}});
    }
  };
  table("");
  if (optimizer) {
    table("adam.m.");
    table("adam.v.");
  }
  header["tensors"] = tensors;
  const std::string text = header.dump(2);

  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) write_tensor(out, p);
  if (optimizer) {
    for (const auto& m : optimizer->m) write_tensor(out, m);
    for (const auto& v : optimizer->v) write_tensor(out, v);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = read_le<std::uint64_t>(in);
  if (header_len > (1u << 24)) throw std::runtime_error("checkpoint: header too large");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("checkpoint: truncated header");

  const json header = json::parse(text);
  const json& arch = header.at("architecture");
  FrameDenoiserConfig cfg;
  cfg.frame_len = arch.at("frame_len").get<std::size_t>();
  cfg.hidden = arch.at("hidden").get<std::size_t>();
  cfg.res_blocks = arch.at("res_blocks").get<std::size_t>();
  cfg.emb_hidden = arch.at("emb_hidden").get<std::size_t>();
  cfg.fourier = arch.at("fourier").get<std::size_t>();
  cfg.cond_dim = arch.at("cond_dim").get<std::size_t>();

  CheckpointMeta meta;
  meta.role = header.at("role").get<std::string>();
  meta.signal_len = header.at("signal_len").get<std::size_t>();
  const json& sched = header.at("schedule");
  meta.sigma_max = sched.at("sigma_max").get<double>();
  meta.sigma_min = sched.at("sigma_min").get<double>();
  meta.rho = sched.at("rho").get<double>();
  meta.n_steps = sched.at("n_steps").get<std::size_t>();

  const json& tensors = header.at("tensors");
  std::vector<Matrix> all;
  for (const json& t : tensors) {
    all.push_back(read_tensor(in, t.at("rows").get<Eigen::Index>(),
                              t.at("cols").get<Eigen::Index>()));
  }
  const bool has_opt = header.value("has_optimizer_state", false);
  const std::size_t n_params = has_opt ? all.size() / 3 : all.size();
  if (has_opt && all.size() != 3 * n_params) {
    throw std::runtime_error("checkpoint: inconsistent tensor table");
  }
  std::vector<Matrix> params(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_params));
  FrameDenoiser model(cfg, header.at("sigma_data").get<double>(), std::move(params));
  model.set_signal_len(meta.signal_len);

  std::optional<AdamState> opt;
  if (has_opt) {
    AdamState state;
    const auto n = static_cast<std::ptrdiff_t>(n_params);
    state.m.assign(all.begin() + n, all.begin() + 2 * n);
    state.v.assign(all.begin() + 2 * n, all.end());
    state.step = header.value("optimizer_step", std::size_t{0});
    opt = std::move(state);
  }
  return {std::move(model), meta, std::move(opt)};
}

}  // namespace dpsep
