#include "gazeflow/ws_server.h"

#include <condition_variable>
#include <deque>
#include <future>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio/executor_work_guard.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "gazeflow/error.h"

namespace gazeflow::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

class Session;

// State shared between the server object and its sessions. Only the network
// thread touches `sessions`; the counters are guarded by `mutex`.
struct Hub {
    sonify::InjectionQueue* queue = nullptr;
    std::set<std::shared_ptr<Session>> sessions;

    std::mutex mutex;
    std::condition_variable changed;
    std::size_t open = 0;
    std::size_t pending_frames = 0;

    void frames_done(std::size_t n) {
        std::lock_guard<std::mutex> lock(mutex);
        pending_frames -= n;
        changed.notify_all();
    }
};

class Session : public std::enable_shared_from_this<Session> {
public:
    Session(tcp::socket socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

    void start() {
        ws_.text(true);
        ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    }

    // Network thread only.
    void send(std::shared_ptr<const std::string> frame, bool counted) {
        if (closed_) {
            if (counted) hub_.frames_done(1);
            return;
        }
        outbox_.push_back({std::move(frame), counted});
        if (outbox_.size() == 1) write_next();
    }

    void close() {
        if (closed_) return;
        beast::error_code ignored;
        tcp::socket& socket = beast::get_lowest_layer(ws_).socket();
        socket.shutdown(tcp::socket::shutdown_both, ignored);
        socket.close(ignored);
        finish();
    }

private:
    struct Frame {
        std::shared_ptr<const std::string> text;
        bool counted;
    };

    void on_accept(beast::error_code ec) {
        if (ec) return;
        accepted_ = true;
        hub_.sessions.insert(shared_from_this());
        {
            std::lock_guard<std::mutex> lock(hub_.mutex);
            ++hub_.open;
        }
        hub_.changed.notify_all();
        read_next();
    }

    void read_next() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
        if (ec) {
            finish();
            return;
        }
        const std::string line = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        send(std::make_shared<const std::string>(sonify::handle_control(line, *hub_.queue)), false);
        read_next();
    }

    void write_next() {
        ws_.async_write(asio::buffer(*outbox_.front().text),
                        [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_write(ec); });
    }

    void on_write(beast::error_code ec) {
        if (outbox_.front().counted) hub_.frames_done(1);
        outbox_.pop_front();
        if (ec) {
            finish();
            return;
        }
        if (!outbox_.empty()) write_next();
    }

    // Drops queued frames and deregisters; safe to call more than once.
    void finish() {
        if (closed_) return;
        closed_ = true;
        std::size_t dropped = 0;
        // The frame at the front may still be in flight; its handler settles it.
        for (std::size_t i = 1; i < outbox_.size(); ++i) dropped += outbox_[i].counted ? 1 : 0;
        if (outbox_.size() > 1) outbox_.erase(outbox_.begin() + 1, outbox_.end());
        if (dropped > 0) hub_.frames_done(dropped);
        if (accepted_) {
            hub_.sessions.erase(shared_from_this());
            std::lock_guard<std::mutex> lock(hub_.mutex);
            --hub_.open;
        }
        hub_.changed.notify_all();
    }

    websocket::stream<beast::tcp_stream> ws_;
    Hub& hub_;
    beast::flat_buffer buffer_;
    std::deque<Frame> outbox_;
    bool accepted_ = false;
    bool closed_ = false;
};

}  // namespace

struct StreamServer::Impl {
    asio::io_context ioc;
    asio::executor_work_guard<asio::io_context::executor_type> work = asio::make_work_guard(ioc);
    tcp::acceptor acceptor{ioc};
    Hub hub;
    std::thread thread;
    std::uint16_t port = 0;
    bool stopped = false;

    void accept_next() {
        acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
            if (ec) return;  // acceptor closed
            std::make_shared<Session>(std::move(socket), hub)->start();
            accept_next();
        });
    }
};

StreamServer::StreamServer(sonify::InjectionQueue& queue, std::uint16_t port) : impl_(std::make_unique<Impl>()) {
    impl_->hub.queue = &queue;
    beast::error_code ec;
    const tcp::endpoint endpoint(asio::ip::make_address("127.0.0.1"), port);
    impl_->acceptor.open(endpoint.protocol(), ec);
    if (!ec) impl_->acceptor.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) impl_->acceptor.bind(endpoint, ec);
    if (!ec) impl_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw IoError("cannot listen on 127.0.0.1:" + std::to_string(port) + ": " + ec.message());
    impl_->port = impl_->acceptor.local_endpoint().port();
    impl_->accept_next();
    impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

StreamServer::~StreamServer() { stop(); }

std::uint16_t StreamServer::port() const { return impl_->port; }

void StreamServer::write(const std::string& line) {
    if (impl_->stopped) throw IoError("stream server is stopped");
    auto frame = std::make_shared<const std::string>(line);
    asio::post(impl_->ioc, [this, frame] {
        Hub& hub = impl_->hub;
        {
            std::lock_guard<std::mutex> lock(hub.mutex);
            hub.pending_frames += hub.sessions.size();
        }
        // Copy: a failing send may deregister its session.
        const auto sessions = hub.sessions;
        for (const auto& s : sessions) s->send(frame, true);
    });
}

bool StreamServer::wait_for_client(std::chrono::milliseconds timeout) {
    std::unique_lock<std::mutex> lock(impl_->hub.mutex);
    return impl_->hub.changed.wait_for(lock, timeout, [this] { return impl_->hub.open > 0; });
}

std::size_t StreamServer::clients() const {
    std::lock_guard<std::mutex> lock(impl_->hub.mutex);
    return impl_->hub.open;
}

bool StreamServer::flush(std::chrono::milliseconds timeout) {
    // A marker posted behind every earlier write() guarantees their frames are counted.
    std::promise<void> marker;
    auto counted = marker.get_future();
    asio::post(impl_->ioc, [&marker] { marker.set_value(); });
    if (counted.wait_for(timeout) != std::future_status::ready) return false;
    std::unique_lock<std::mutex> lock(impl_->hub.mutex);
    return impl_->hub.changed.wait_for(lock, timeout, [this] { return impl_->hub.pending_frames == 0; });
}

void StreamServer::stop() {
    if (!impl_ || impl_->stopped) return;
    impl_->stopped = true;
    asio::post(impl_->ioc, [this] {
        beast::error_code ignored;
        impl_->acceptor.close(ignored);
        const auto sessions = impl_->hub.sessions;
        for (const auto& s : sessions) s->close();
        impl_->work.reset();
    });
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace gazeflow::net
