#pragma once

#include "graphdiff/common.hpp"
#include "graphdiff/denoiser.hpp"
#include "graphdiff/training.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace graphdiff {

namespace detail {

constexpr char kCheckpointMagic[4] = {'G', 'D', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32_ck(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64_ck(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_ck(const std::string& d, std::size_t& pos) {
    if (pos + 4 > d.size()) throw MismatchError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(d[pos + static_cast<std::size_t>(i)]);
    pos += 4;
    return v;
}

inline std::uint64_t get_u64_ck(const std::string& d, std::size_t& pos) {
    if (pos + 8 > d.size()) throw MismatchError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(d[pos + static_cast<std::size_t>(i)]);
    pos += 8;
    return v;
}

inline nlohmann::json schedule_spec_to_json(const ScheduleSpec& s) {
    return {{"kind", to_string(s.kind)},
            {"steps", s.steps},
            {"offset_s", s.offset_s},
            {"beta_start", s.beta_start},
            {"beta_end", s.beta_end}};
}

inline ScheduleSpec schedule_spec_from_json(const nlohmann::json& j) {
    ScheduleSpec s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "linear")
        s.kind = ScheduleKind::linear;
    else if (kind == "cosine")
        s.kind = ScheduleKind::cosine;
    else
        throw MismatchError("checkpoint: unknown schedule kind '" + kind + "'");
    s.steps = j.at("steps").get<int>();
    s.offset_s = j.value("offset_s", s.offset_s);
    s.beta_start = j.value("beta_start", s.beta_start);
    s.beta_end = j.value("beta_end", s.beta_end);
    return s;
}

} // namespace detail

struct CheckpointMeta {
    int epoch = 0;
    std::uint64_t seed = 0;
};

/// Binary checkpoint: magic, version, a JSON header describing the
/// model configuration, schedule, metadata and tensor directory, then
/// one little-endian f64 blob with all tensors in visitation order.
inline void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& model,
                            const ScheduleSpec& schedule, const CheckpointMeta& meta) {
    nlohmann::json header;
    const auto& cfg = model.config();
    header["config"] = {{"model_dim", cfg.model_dim},
                        {"num_blocks", cfg.num_blocks},
                        {"time_embed_dim", cfg.time_embed_dim},
                        {"activation", to_string(cfg.activation)},
                        {"skeleton", skeleton_to_json(cfg.skeleton)}};
    header["schedule"] = detail::schedule_spec_to_json(schedule);
    header["metadata"] = {{"epoch", meta.epoch}, {"seed", meta.seed}};

    std::vector<const Mat*> tensors;
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for_each_tensor(const_cast<DenoiserParams&>(model.params()),
                    [&](const std::string& name, Mat& m) {
                        dir.push_back({{"name", name},
                                       {"rows", m.rows()},
                                       {"cols", m.cols()},
                                       {"offset", offset}});
                        offset += static_cast<std::uint64_t>(m.size());
                        tensors.push_back(&m);
                    });
    header["tensors"] = std::move(dir);

    const std::string header_str = header.dump();
    std::string buf;
    buf.reserve(16 + header_str.size() + offset * 8);
    buf.append(detail::kCheckpointMagic, 4);
    detail::put_u32_ck(buf, detail::kCheckpointVersion);
    detail::put_u64_ck(buf, header_str.size());
    buf += header_str;
    for (const Mat* m : tensors) {
        for (Eigen::Index r = 0; r < m->rows(); ++r) {
            for (Eigen::Index c = 0; c < m->cols(); ++c) {
                std::uint64_t bits;
                const double v = (*m)(r, c);
                std::memcpy(&bits, &v, 8);
                detail::put_u64_ck(buf, bits);
            }
        }
    }
    atomic_write_file(path, buf);
}

struct LoadedCheckpoint {
    DenoiserModel model;
    ScheduleSpec schedule;
    CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    if (data.size() < 16 || std::memcmp(data.data(), detail::kCheckpointMagic, 4) != 0)
        throw MismatchError("checkpoint: bad magic");
    std::size_t pos = 4;
    const std::uint32_t version = detail::get_u32_ck(data, pos);
    if (version != detail::kCheckpointVersion)
        throw MismatchError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint64_t header_len = detail::get_u64_ck(data, pos);
    if (pos + header_len > data.size()) throw MismatchError("checkpoint truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(data.substr(pos, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw MismatchError(std::string("checkpoint: bad header: ") + e.what());
    }
    pos += header_len;

    DenoiserConfig cfg;
    ScheduleSpec sched;
    CheckpointMeta meta;
    try {
        const auto& jc = header.at("config");
        cfg.model_dim = jc.at("model_dim").get<int>();
        cfg.num_blocks = jc.at("num_blocks").get<int>();
        cfg.time_embed_dim = jc.at("time_embed_dim").get<int>();
        cfg.activation = activation_from_string(jc.at("activation").get<std::string>());
        cfg.skeleton = skeleton_from_json(jc.at("skeleton"));
        sched = detail::schedule_spec_from_json(header.at("schedule"));
        meta.epoch = header.at("metadata").at("epoch").get<int>();
        meta.seed = header.at("metadata").at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw MismatchError(std::string("checkpoint: bad header: ") + e.what());
    }

    LoadedCheckpoint out{DenoiserModel(cfg), sched, meta};

    const std::size_t blob_start = pos;
    const std::size_t blob_doubles = (data.size() - blob_start) / 8;
    std::size_t found = 0;
    if (!header.contains("tensors") || !header["tensors"].is_array())
        throw MismatchError("checkpoint: bad header: missing tensor directory");
    const auto& dir = header["tensors"];
    try {
        for_each_tensor(out.model.params(), [&](const std::string& name, Mat& m) {
            for (const auto& entry : dir) {
                if (entry.at("name").get<std::string>() != name) continue;
                ++found;
                if (entry.at("rows").get<Eigen::Index>() != m.rows() ||
                    entry.at("cols").get<Eigen::Index>() != m.cols())
                    throw MismatchError("checkpoint: tensor shape mismatch for " + name);
                const auto offset = entry.at("offset").get<std::uint64_t>();
                if (offset + static_cast<std::uint64_t>(m.size()) > blob_doubles)
                    throw MismatchError("checkpoint: tensor data out of range for " + name);
                std::size_t p = blob_start + offset * 8;
                for (Eigen::Index r = 0; r < m.rows(); ++r) {
                    for (Eigen::Index c = 0; c < m.cols(); ++c) {
                        const std::uint64_t bits = detail::get_u64_ck(data, p);
                        double v;
                        std::memcpy(&v, &bits, 8);
                        m(r, c) = v;
                    }
                }
                return;
            }
            throw MismatchError("checkpoint: missing tensor " + name);
        });
    } catch (const nlohmann::json::exception& e) {
        throw MismatchError(std::string("checkpoint: bad tensor directory: ") + e.what());
    }
    if (found != dir.size())
        throw MismatchError("checkpoint: tensor directory does not match the model");
    return out;
}

} // namespace graphdiff
