#include "transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <condition_variable>
#include <cstdio>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "error.hpp"

namespace wssl {

namespace {

using Clock = std::chrono::steady_clock;

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int shift = 0; shift < 64; shift += 8)
        out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
}

void put_f64le(std::vector<std::uint8_t>& out, double v) {
    put_u64le(out, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t read_u32be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

class PayloadReader {
public:
    explicit PayloadReader(std::span<const std::uint8_t> buf) : buf_(buf) {}

    std::uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    void bytes(std::uint8_t* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return buf_.size() - pos_; }

    void need(std::size_t n) const {
        if (remaining() < n) fail_protocol("truncated payload: wanted " + std::to_string(n) +
                                           " more bytes, have " + std::to_string(remaining()));
    }

private:
    std::span<const std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

void put_matrix(std::vector<std::uint8_t>& out, const Matrix& m, const char* what) {
    m.ensure_finite(what);
    put_u32le(out, static_cast<std::uint32_t>(m.rows()));
    put_u32le(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) put_f64le(out, v);
}

Matrix read_matrix(PayloadReader& r) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    r.need(count * 8);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < count; ++i) m.values()[i] = r.f64();
    return m;
}

void end_of_payload(const PayloadReader& r, const char* what) {
    if (r.remaining() != 0)
        fail_protocol(std::string(what) + " payload has " + std::to_string(r.remaining()) +
                      " trailing bytes");
}

std::vector<std::uint8_t> encode_payload(const ActivationMsg& msg) {
    std::vector<std::uint8_t> out;
    put_u32le(out, msg.client_id);
    put_u32le(out, msg.batch_id);
    put_matrix(out, msg.activations, "activations");
    put_matrix(out, msg.labels, "labels");
    return out;
}

std::vector<std::uint8_t> encode_payload(const GradientMsg& msg) {
    std::vector<std::uint8_t> out;
    put_u32le(out, msg.client_id);
    put_u32le(out, msg.batch_id);
    put_matrix(out, msg.cut_grad, "cut gradient");
    put_f64le(out, msg.loss);
    return out;
}

std::vector<std::uint8_t> encode_payload(const ParamsMsg& msg) {
    std::vector<std::uint8_t> out;
    put_u32le(out, msg.client_id);
    put_u32le(out, static_cast<std::uint32_t>(msg.params.count()));
    for (std::size_t i = 0; i < msg.params.count(); ++i) {
        const std::string& name = msg.params.name(i);
        put_u32le(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_matrix(out, msg.params.tensor(i), name.c_str());
    }
    return out;
}

std::vector<std::uint8_t> encode_payload(const ImportanceReportMsg& msg) {
    std::vector<std::uint8_t> out;
    put_u32le(out, msg.round);
    put_u32le(out, static_cast<std::uint32_t>(msg.entries.size()));
    for (const auto& e : msg.entries) {
        put_u32le(out, e.client_id);
        put_f64le(out, e.beta);
        put_f64le(out, e.gamma);
    }
    put_u32le(out, static_cast<std::uint32_t>(msg.selected_ids.size()));
    for (std::uint32_t id : msg.selected_ids) put_u32le(out, id);
    return out;
}

std::vector<std::uint8_t> encode_payload(const DigestMsg& msg) {
    std::vector<std::uint8_t> out;
    put_u32le(out, msg.client_id);
    put_u64le(out, msg.row_count);
    out.insert(out.end(), msg.digest.begin(), msg.digest.end());
    return out;
}

std::vector<std::uint8_t> encode_payload(const ControlMsg& msg) {
    std::vector<std::uint8_t> out;
    put_u8(out, static_cast<std::uint8_t>(msg.kind));
    put_u32le(out, msg.client_id);
    put_u32le(out, msg.round);
    put_f64le(out, msg.value);
    return out;
}

Message decode_activation(PayloadReader& r) {
    ActivationMsg msg;
    msg.client_id = r.u32();
    msg.batch_id = r.u32();
    msg.activations = read_matrix(r);
    msg.labels = read_matrix(r);
    end_of_payload(r, "activation");
    return msg;
}

Message decode_gradient(PayloadReader& r) {
    GradientMsg msg;
    msg.client_id = r.u32();
    msg.batch_id = r.u32();
    msg.cut_grad = read_matrix(r);
    msg.loss = r.f64();
    end_of_payload(r, "gradient");
    return msg;
}

Message decode_params(PayloadReader& r) {
    ParamsMsg msg;
    msg.client_id = r.u32();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        Matrix tensor = read_matrix(r);
        msg.params.entries.emplace_back(std::move(name), std::move(tensor));
    }
    end_of_payload(r, "params");
    return msg;
}

Message decode_importance(PayloadReader& r) {
    ImportanceReportMsg msg;
    msg.round = r.u32();
    const std::uint32_t count = r.u32();
    r.need(static_cast<std::size_t>(count) * 20);
    msg.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ImportanceReportMsg::Entry e;
        e.client_id = r.u32();
        e.beta = r.f64();
        e.gamma = r.f64();
        msg.entries.push_back(e);
    }
    const std::uint32_t selected = r.u32();
    r.need(static_cast<std::size_t>(selected) * 4);
    msg.selected_ids.reserve(selected);
    for (std::uint32_t i = 0; i < selected; ++i) msg.selected_ids.push_back(r.u32());
    end_of_payload(r, "importance report");
    return msg;
}

Message decode_digest(PayloadReader& r) {
    DigestMsg msg;
    msg.client_id = r.u32();
    msg.row_count = r.u64();
    r.bytes(msg.digest.data(), msg.digest.size());
    end_of_payload(r, "digest");
    return msg;
}

Message decode_control(PayloadReader& r) {
    const std::uint8_t kind = r.u8();
    if (kind < 1 || kind > 4)
        fail_protocol("unknown control kind " + std::to_string(kind));
    ControlMsg msg;
    msg.kind = static_cast<ControlKind>(kind);
    msg.client_id = r.u32();
    msg.round = r.u32();
    msg.value = r.f64();
    end_of_payload(r, "control");
    return msg;
}

Message decode_payload(std::uint8_t type, std::span<const std::uint8_t> payload) {
    PayloadReader r(payload);
    switch (type) {
        case 1: return decode_activation(r);
        case 2: return decode_gradient(r);
        case 3: return decode_params(r);
        case 4: return decode_importance(r);
        case 5: return decode_digest(r);
        case 6: return decode_control(r);
        default: break;
    }
    char buf[48];
    std::snprintf(buf, sizeof buf, "unknown message type byte 0x%02x", type);
    fail_protocol(buf);
}

} // namespace

MessageType message_type(const Message& msg) {
    struct Visitor {
        MessageType operator()(const ActivationMsg&) const { return MessageType::Activation; }
        MessageType operator()(const GradientMsg&) const { return MessageType::Gradient; }
        MessageType operator()(const ParamsMsg&) const { return MessageType::Params; }
        MessageType operator()(const ImportanceReportMsg&) const {
            return MessageType::ImportanceReport;
        }
        MessageType operator()(const DigestMsg&) const { return MessageType::Digest; }
        MessageType operator()(const ControlMsg&) const { return MessageType::Control; }
    };
    return std::visit(Visitor{}, msg);
}

const char* message_type_name(MessageType type) {
    switch (type) {
        case MessageType::Activation: return "activation";
        case MessageType::Gradient: return "gradient";
        case MessageType::Params: return "params";
        case MessageType::ImportanceReport: return "importance-report";
        case MessageType::Digest: return "digest";
        case MessageType::Control: return "control";
    }
    return "unknown";
}

std::vector<std::uint8_t> encode_frame(const Message& msg) {
    std::vector<std::uint8_t> payload =
        std::visit([](const auto& m) { return encode_payload(m); }, msg);
    if (payload.size() > kMaxPayloadSize)
        fail_protocol("payload of " + std::to_string(payload.size()) +
                      " bytes exceeds the 64 MiB cap");
    std::vector<std::uint8_t> frame;
    frame.reserve(kFrameHeaderSize + payload.size());
    const auto len = static_cast<std::uint32_t>(payload.size());
    frame.push_back(static_cast<std::uint8_t>((len >> 24) & 0xff));
    frame.push_back(static_cast<std::uint8_t>((len >> 16) & 0xff));
    frame.push_back(static_cast<std::uint8_t>((len >> 8) & 0xff));
    frame.push_back(static_cast<std::uint8_t>(len & 0xff));
    frame.push_back(static_cast<std::uint8_t>(message_type(msg)));
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

Message decode_frame(std::span<const std::uint8_t> frame) {
    if (frame.size() < kFrameHeaderSize)
        fail_protocol("frame of " + std::to_string(frame.size()) +
                      " bytes is shorter than the 5-byte header");
    const std::uint32_t len = read_u32be(frame.data());
    if (len > kMaxPayloadSize)
        fail_protocol("payload length " + std::to_string(len) + " exceeds the 64 MiB cap");
    if (frame.size() - kFrameHeaderSize != len)
        fail_protocol("frame length mismatch: header says " + std::to_string(len) +
                      " payload bytes, got " + std::to_string(frame.size() - kFrameHeaderSize));
    return decode_payload(frame[4], frame.subspan(kFrameHeaderSize));
}

namespace {

// ---------------------------------------------------------------- in-proc

struct MsgQueue {
    std::mutex m;
    std::condition_variable cv;
    std::deque<Message> q;
    bool closed = false;
};

class InProcChannel final : public Channel {
public:
    InProcChannel(std::shared_ptr<MsgQueue> in, std::shared_ptr<MsgQueue> out)
        : in_(std::move(in)), out_(std::move(out)) {}

    ~InProcChannel() override {
        std::lock_guard lk(out_->m);
        out_->closed = true;
        out_->cv.notify_all();
    }

    void send(const Message& msg) override {
        {
            std::lock_guard lk(out_->m);
            if (out_->closed) fail_io("send on a channel whose peer is gone");
            out_->q.push_back(msg);
        }
        out_->cv.notify_one();
    }

    Message recv(std::chrono::milliseconds timeout) override {
        std::unique_lock lk(in_->m);
        const bool got = in_->cv.wait_for(lk, timeout, [&] { return !in_->q.empty() || in_->closed; });
        if (!in_->q.empty()) {
            Message msg = std::move(in_->q.front());
            in_->q.pop_front();
            return msg;
        }
        if (got && in_->closed) fail_io("recv on a channel whose peer is gone");
        fail_timeout("recv timed out after " + std::to_string(timeout.count()) + " ms");
    }

    bool try_recv(Message& out) override {
        std::lock_guard lk(in_->m);
        if (in_->q.empty()) return false;
        out = std::move(in_->q.front());
        in_->q.pop_front();
        return true;
    }

private:
    std::shared_ptr<MsgQueue> in_;
    std::shared_ptr<MsgQueue> out_;
};

// ------------------------------------------------------------------- tcp

[[noreturn]] void fail_errno(const std::string& what) {
    fail_io(what + ": " + std::strerror(errno));
}

int poll_fd(int fd, short events, int timeout_ms) {
    struct pollfd pfd{};
    pfd.fd = fd;
    pfd.events = events;
    for (;;) {
        const int rc = ::poll(&pfd, 1, timeout_ms);
        if (rc >= 0) return rc;
        if (errno != EINTR) fail_errno("poll");
    }
}

class TcpChannel final : public Channel {
public:
    explicit TcpChannel(int fd) : fd_(fd) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }

    ~TcpChannel() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void send(const Message& msg) override {
        ensure_usable();
        const std::vector<std::uint8_t> frame = encode_frame(msg);
        const std::uint8_t* p = frame.data();
        std::size_t left = frame.size();
        while (left > 0) {
            const ssize_t n = ::send(fd_, p, left, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                fail_errno("send");
            }
            p += static_cast<std::size_t>(n);
            left -= static_cast<std::size_t>(n);
        }
    }

    Message recv(std::chrono::milliseconds timeout) override {
        ensure_usable();
        const auto deadline = Clock::now() + timeout;
        for (;;) {
            if (Message msg; extract(msg)) return msg;
            if (closed_) fail_io("recv on a channel whose peer is gone");
            const auto now = Clock::now();
            if (now >= deadline)
                fail_timeout("recv timed out after " + std::to_string(timeout.count()) + " ms");
            const auto left =
                std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
            if (poll_fd(fd_, POLLIN, static_cast<int>(left) + 1) > 0) read_some(false);
        }
    }

    bool try_recv(Message& out) override {
        ensure_usable();
        if (extract(out)) return true;
        if (closed_) return false;
        read_some(true);
        return extract(out);
    }

private:
    void ensure_usable() const {
        if (poisoned_)
            fail_protocol("channel poisoned by an earlier protocol error; no further traffic");
    }

    // Appends whatever the socket has ready. Peer shutdown with a partial
    // frame buffered is a framing violation and poisons the channel.
    void read_some(bool nonblocking) {
        std::uint8_t tmp[65536];
        for (;;) {
            const ssize_t n = ::recv(fd_, tmp, sizeof tmp, nonblocking ? MSG_DONTWAIT : 0);
            if (n > 0) {
                rxbuf_.insert(rxbuf_.end(), tmp, tmp + n);
                if (!nonblocking) return;
                continue;
            }
            if (n == 0) {
                closed_ = true;
                if (!rxbuf_.empty()) {
                    poisoned_ = true;
                    fail_protocol("peer closed the connection mid-frame");
                }
                return;
            }
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) return;
            fail_errno("recv");
        }
    }

    bool extract(Message& out) {
        if (rxbuf_.size() < kFrameHeaderSize) return false;
        const std::uint32_t len = read_u32be(rxbuf_.data());
        if (len > kMaxPayloadSize) {
            poisoned_ = true;
            fail_protocol("payload length " + std::to_string(len) + " exceeds the 64 MiB cap");
        }
        const std::size_t total = kFrameHeaderSize + len;
        if (rxbuf_.size() < total) return false;
        try {
            out = decode_frame(std::span<const std::uint8_t>(rxbuf_.data(), total));
        } catch (...) {
            poisoned_ = true;
            throw;
        }
        rxbuf_.erase(rxbuf_.begin(), rxbuf_.begin() + static_cast<std::ptrdiff_t>(total));
        return true;
    }

    int fd_ = -1;
    std::vector<std::uint8_t> rxbuf_;
    bool poisoned_ = false;
    bool closed_ = false;
};

} // namespace

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_inproc_pair() {
    auto a_to_b = std::make_shared<MsgQueue>();
    auto b_to_a = std::make_shared<MsgQueue>();
    return {std::make_unique<InProcChannel>(b_to_a, a_to_b),
            std::make_unique<InProcChannel>(a_to_b, b_to_a)};
}

TcpListener::TcpListener(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) fail_errno("socket");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        const int saved = errno;
        ::close(fd_);
        fd_ = -1;
        errno = saved;
        fail_errno("bind 127.0.0.1:" + std::to_string(port));
    }
    if (::listen(fd_, 16) != 0) {
        const int saved = errno;
        ::close(fd_);
        fd_ = -1;
        errno = saved;
        fail_errno("listen");
    }
    socklen_t len = sizeof addr;
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
        const int saved = errno;
        ::close(fd_);
        fd_ = -1;
        errno = saved;
        fail_errno("getsockname");
    }
    port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Channel> TcpListener::accept(std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    for (;;) {
        const auto now = Clock::now();
        if (now >= deadline)
            fail_timeout("accept timed out after " + std::to_string(timeout.count()) + " ms");
        const auto left =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
        if (poll_fd(fd_, POLLIN, static_cast<int>(left) + 1) == 0) continue;
        const int conn = ::accept(fd_, nullptr, nullptr);
        if (conn < 0) {
            if (errno == EINTR || errno == ECONNABORTED) continue;
            fail_errno("accept");
        }
        return std::make_unique<TcpChannel>(conn);
    }
}

std::unique_ptr<Channel> tcp_connect(const std::string& host, std::uint16_t port,
                                     std::chrono::milliseconds timeout) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
        fail_invalid("not an IPv4 address: " + host);

    const auto deadline = Clock::now() + timeout;
    for (;;) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) fail_errno("socket");
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0)
            return std::make_unique<TcpChannel>(fd);
        const int saved = errno;
        ::close(fd);
        if (saved != ECONNREFUSED && saved != EINTR) {
            errno = saved;
            fail_errno("connect to " + host + ":" + std::to_string(port));
        }
        if (Clock::now() >= deadline)
            fail_timeout("connect to " + host + ":" + std::to_string(port) + " timed out after " +
                         std::to_string(timeout.count()) + " ms");
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
}

} // namespace wssl
