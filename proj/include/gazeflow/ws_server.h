#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include "gazeflow/sonification.h"

namespace gazeflow::net {

// WebSocket endpoint on 127.0.0.1 for the browser front end. Every line written
// to the server is broadcast as a text frame to all connected clients; text
// frames received from a client are treated as control-channel commands and
// answered on the same connection. Port 0 binds an ephemeral port.
//
// The network loop runs on a private thread. write() may be called from any
// thread; delivery is asynchronous and a slow or vanished client never blocks
// the replay.
class StreamServer : public sonify::Sink {
public:
    StreamServer(sonify::InjectionQueue& queue, std::uint16_t port = 0);
    ~StreamServer() override;

    StreamServer(const StreamServer&) = delete;
    StreamServer& operator=(const StreamServer&) = delete;

    std::uint16_t port() const;

    void write(const std::string& line) override;

    // True once at least one client has completed the handshake.
    bool wait_for_client(std::chrono::milliseconds timeout);
    std::size_t clients() const;

    // Waits until every queued frame has been handed to the socket.
    bool flush(std::chrono::milliseconds timeout);

    // Closes all connections and joins the network thread. Idempotent.
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace gazeflow::net
