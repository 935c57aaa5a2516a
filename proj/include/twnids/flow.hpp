#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace twnids {

enum class Protocol : std::uint8_t { Tcp = 0, Udp = 1, Other = 2 };

inline constexpr std::size_t kProtocolCount = 3;
inline constexpr std::array<Protocol, kProtocolCount> kProtocols{Protocol::Tcp, Protocol::Udp,
                                                                 Protocol::Other};

constexpr std::size_t index_of(Protocol p) noexcept { return static_cast<std::size_t>(p); }

inline std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::Tcp: return "TCP";
    case Protocol::Udp: return "UDP";
    case Protocol::Other: return "OTHER";
  }
  return "OTHER";
}

// One harmonized flow. Durations are seconds, byte counts include headers.
struct FlowRecord {
  double timestamp = 0.0;
  std::string src_ip;
  std::string dst_ip;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  Protocol protocol = Protocol::Other;
  double duration = 0.0;
  std::uint64_t src_packets = 0;
  std::uint64_t dst_packets = 0;
  std::uint64_t src_bytes = 0;
  std::uint64_t dst_bytes = 0;
  std::string label;

  friend bool operator==(const FlowRecord&, const FlowRecord&) = default;
};

}  // namespace twnids
