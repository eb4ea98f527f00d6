#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "exfilscope/packet.hpp"

namespace exfilscope {

struct PcapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagic : PcapError {
    explicit BadMagic(const std::string& what) : PcapError(what) {}
};
struct NonEthernetLink : PcapError {
    explicit NonEthernetLink(const std::string& what) : PcapError(what) {}
};
struct TruncatedRecord : PcapError {
    explicit TruncatedRecord(const std::string& what) : PcapError(what) {}
};
struct UnorderedInput : PcapError {
    explicit UnorderedInput(const std::string& what) : PcapError(what) {}
};
struct IoFailure : PcapError {
    explicit IoFailure(const std::string& what) : PcapError(what) {}
};

// Streaming reader for classic pcap files (both byte orders, microsecond and
// nanosecond variants, Ethernet link type only). Timestamps are rebased so
// the first packet of the capture reads 0.0 and are clamped non-decreasing.
class PcapReader {
public:
    explicit PcapReader(const std::filesystem::path& path);
    ~PcapReader();

    PcapReader(const PcapReader&) = delete;
    PcapReader& operator=(const PcapReader&) = delete;

    // next record, or nullopt at end of file; throws TruncatedRecord if the
    // file ends mid-record
    std::optional<PacketMeta> next();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// whole-file convenience wrapper around PcapReader
std::vector<PacketMeta> parse_pcap(const std::filesystem::path& path);

// Writes a little-endian microsecond classic pcap with synthesized
// Ethernet/IPv4/TCP-or-UDP headers and zero padding out to frame_len.
// Returns bytes written. Input must be non-decreasing in timestamp.
std::uint64_t write_pcap(std::span<const PacketMeta> packets,
                         const std::filesystem::path& path);

}  // namespace exfilscope
