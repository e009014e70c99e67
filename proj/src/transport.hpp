#ifndef WSSL_TRANSPORT_HPP
#define WSSL_TRANSPORT_HPP

#include <array>
#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nn.hpp"

namespace wssl {

// Wire format: every frame is a 5-byte header — payload length as u32
// big-endian (excluding the header itself) followed by one type byte —
// then the payload. Numeric payload fields are little-endian; matrices are
// row-major 64-bit IEEE-754.
constexpr std::size_t kFrameHeaderSize = 5;
constexpr std::size_t kMaxPayloadSize = 64u * 1024u * 1024u;

enum class MessageType : std::uint8_t {
    Activation = 1,
    Gradient = 2,
    Params = 3,
    ImportanceReport = 4,
    Digest = 5,
    Control = 6,
};

// Payload: client_id u32, batch_id u32, rows u32, cols u32, values;
// then the labels matrix appended the same way (rows u32, cols u32, values).
struct ActivationMsg {
    std::uint32_t client_id = 0;
    std::uint32_t batch_id = 0;
    Matrix activations;
    Matrix labels;
};

// Payload: client_id u32, batch_id u32, rows u32, cols u32, values, loss f64.
struct GradientMsg {
    std::uint32_t client_id = 0;
    std::uint32_t batch_id = 0;
    Matrix cut_grad;
    double loss = 0.0;
};

// Payload: client_id u32, tensor count u32, then per tensor:
// name length u32, name bytes, rows u32, cols u32, values.
struct ParamsMsg {
    std::uint32_t client_id = 0;
    ParamSet params;
};

// Per-round selection outcome. Payload: round u32, entry count u32,
// entries (client_id u32, beta f64, gamma f64), selected count u32,
// selected ids (u32 each, sampled order).
struct ImportanceReportMsg {
    struct Entry {
        std::uint32_t client_id = 0;
        double beta = 0.0;
        double gamma = 0.0;
    };
    std::uint32_t round = 0;
    std::vector<Entry> entries;
    std::vector<std::uint32_t> selected_ids;
};

// Payload: client_id u32, row_count u64, 32 digest bytes.
struct DigestMsg {
    std::uint32_t client_id = 0;
    std::uint64_t row_count = 0;
    std::array<std::uint8_t, 32> digest{};
};

enum class ControlKind : std::uint8_t {
    Join = 1,
    RoundStart = 2,
    RoundEnd = 3,
    Shutdown = 4,
};

// Payload: kind u8, client_id u32, round u32, value f64. `value` carries
// the round's validation accuracy on a RoundEnd acknowledgement.
struct ControlMsg {
    ControlKind kind = ControlKind::Join;
    std::uint32_t client_id = 0;
    std::uint32_t round = 0;
    double value = 0.0;
};

using Message = std::variant<ActivationMsg, GradientMsg, ParamsMsg, ImportanceReportMsg,
                             DigestMsg, ControlMsg>;

MessageType message_type(const Message& msg);
const char* message_type_name(MessageType type);

// Full frame bytes (header + payload). Throws on non-finite matrix values
// or a payload over the size cap.
std::vector<std::uint8_t> encode_frame(const Message& msg);

// Strict inverse of encode_frame: bad type byte, length mismatch, truncated
// or trailing payload bytes are protocol errors.
Message decode_frame(std::span<const std::uint8_t> frame);

// Bidirectional, FIFO, message-oriented endpoint. recv with nothing pending
// raises a timeout error after `timeout`; a peer that went away raises an
// io error; a malformed frame poisons the channel and every later call
// raises a protocol error.
class Channel {
public:
    virtual ~Channel() = default;
    virtual void send(const Message& msg) = 0;
    virtual Message recv(std::chrono::milliseconds timeout) = 0;
    // Non-blocking; true and fills `out` if a whole message is pending.
    virtual bool try_recv(Message& out) = 0;
};

// Lossless in-process queue pair (first <-> second).
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_inproc_pair();

class TcpListener {
public:
    // Binds 127.0.0.1:`port`; port 0 picks a free port (see port()).
    explicit TcpListener(std::uint16_t port);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const { return port_; }
    std::unique_ptr<Channel> accept(std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

std::unique_ptr<Channel> tcp_connect(const std::string& host, std::uint16_t port,
                                     std::chrono::milliseconds timeout);

} // namespace wssl

#endif
