#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kdsm/grouping.hpp"
#include "kdsm/tensor.hpp"

namespace kdsm {

std::uint32_t crc32(const unsigned char* data, std::size_t n);

/// Everything needed to reproduce evaluation bit-exactly: config snapshot,
/// named tensors (model weights plus optimizer moments), the grouping, and
/// the tail of the training log.
struct Checkpoint {
    std::uint32_t version = 1;
    std::string config_json;
    std::vector<std::pair<std::string, Tensor>> tensors;
    bool has_grouping = false;
    Grouping grouping;
    std::vector<std::string> log_tail;

    const Tensor* find(const std::string& name) const;
};

/// KCKP container: magic "KCKP", u32 version, u32 CRC32 of the payload,
/// u64 payload length, payload. The payload holds the length-prefixed
/// config JSON, the grouping section, log lines, and the named tensors as
/// {u16 name len, name, u8 rank, u32 dims..., little-endian f64 data}.
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Standalone grouping file (the `cluster` subcommand output) using the
/// same binary section, plus a human-readable sidecar listing.
void save_grouping(const Grouping& g, const std::string& path);
Grouping load_grouping(const std::string& path);
void write_grouping_sidecar(const Grouping& g, const std::string& path);

} // namespace kdsm
