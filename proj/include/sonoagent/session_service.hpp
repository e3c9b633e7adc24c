#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sonoagent/eval_harness.hpp"
#include "sonoagent/execution_engine.hpp"

namespace httplib {
class Server;
}

namespace sonoagent {

enum class StepMode { Auto, Manual };

struct SessionRequest {
    std::string instruction;
    BackendKind backend = BackendKind::Rule;
    Ablation ablation = Ablation::UarRhr;
    std::uint64_t seed = 0;
    StepMode mode = StepMode::Auto;
    std::vector<FaultSpec> faults;
    std::vector<std::string> script;         // scripted backend only
    std::optional<int> step_delay_ms;        // auto mode pacing
};

/// Throws Error(InvalidInput) naming the offending field.
SessionRequest parse_session_request(const nlohmann::json& body);

struct ServiceConfig {
    RemoteChatConfig remote;
    int default_step_delay_ms = 0;
    std::optional<std::filesystem::path> transcript_dir;  // closed transcripts written here
    SessionOptions session_options;
};

/// Ordered event log of one session. Events are appended only after a
/// step has fully executed; subscribers read by sequence number.
class EventLog {
public:
    void publish(nlohmann::json event);  // assigns seq (1-based)
    void close();

    /// Events with seq > after_seq, waiting up to `timeout` for at least
    /// one. `closed` reports whether the log will never grow again.
    std::vector<nlohmann::json> read_after(std::int64_t after_seq, std::chrono::milliseconds timeout,
                                           bool& closed) const;
    std::vector<nlohmann::json> snapshot() const;
    std::int64_t last_seq() const;

private:
    mutable std::mutex mutex_;
    mutable std::condition_variable cv_;
    std::vector<nlohmann::json> events_;
    bool closed_ = false;
};

class ManagedSession {
public:
    ManagedSession(std::string id, SessionRequest request, std::unique_ptr<Session> session, int step_delay_ms,
                   std::optional<std::filesystem::path> transcript_dir);
    ~ManagedSession();

    const std::string& id() const { return id_; }
    const SessionRequest& request() const { return request_; }
    const EventLog& events() const { return events_; }

    void start();  // launches the auto-mode worker
    void stop();   // stops the worker without closing the session

    /// Manual mode only (Error(ModeConflict) otherwise). Returns the step event.
    nlohmann::json step();
    void abort();
    void inject_fault(FaultSpec fault);

    nlohmann::json describe() const;

private:
    void run_step_locked();   // requires command_mutex_
    void publish_terminal_locked();
    void worker_loop(std::stop_token stop);

    std::string id_;
    SessionRequest request_;
    std::string created_at_;
    int step_delay_ms_ = 0;
    std::optional<std::filesystem::path> transcript_dir_;
    mutable std::mutex command_mutex_;
    std::unique_ptr<Session> session_;
    EventLog events_;
    std::jthread worker_;
};

/// HTTP-independent session registry behind the service.
class SessionManager {
public:
    SessionManager(std::shared_ptr<const KnowledgeIndex> index, std::vector<ApiSpec> registry, ServiceConfig config);
    ~SessionManager();

    /// Throws Error(InvalidInput) and Error(BackendUnavailable).
    std::shared_ptr<ManagedSession> create(SessionRequest request);
    /// Throws Error(UnknownSession).
    std::shared_ptr<ManagedSession> get(const std::string& id) const;
    /// Dispatches {"command": "step" | "abort" | "inject_fault", "fault": {...}}.
    nlohmann::json control(const std::string& id, const nlohmann::json& body);

    const std::vector<ApiSpec>& registry() const { return registry_; }
    void shutdown();
    bool shutting_down() const { return shutting_down_; }

private:
    std::shared_ptr<const KnowledgeIndex> index_;
    std::vector<ApiSpec> registry_;
    ServiceConfig config_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<ManagedSession>> sessions_;
    std::atomic<std::uint64_t> next_id_{1};
    std::uint64_t id_salt_ = 0;
    std::atomic<bool> shutting_down_{false};
};

/// HTTP status for an Error code.
int http_status_for(ErrorCode code);

/// Routes:
///   POST /api/sessions, GET /api/sessions/{id}, GET /api/sessions/{id}/events
///   (text/event-stream), POST /api/sessions/{id}/control, GET /api/registry,
///   GET /healthz.
class SessionServer {
public:
    explicit SessionServer(std::shared_ptr<SessionManager> manager);
    ~SessionServer();

    /// Blocks until stop().
    bool listen(const std::string& host, int port);
    /// Binds an ephemeral port and serves on a background thread.
    int start_background(const std::string& host = "127.0.0.1");
    void stop();

private:
    std::shared_ptr<SessionManager> manager_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace sonoagent
