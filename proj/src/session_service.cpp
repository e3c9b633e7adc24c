#include "sonoagent/session_service.hpp"

#include <ctime>
#include <fstream>
#include <random>

#include <httplib.h>

#include "sonoagent/errors.hpp"
#include "sonoagent/json_util.hpp"

namespace sonoagent {

using nlohmann::json;

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string_view to_string(StepMode mode) { return mode == StepMode::Auto ? "auto" : "manual"; }

const json& require_object(const json& body) {
    if (!body.is_object()) throw Error(ErrorCode::InvalidInput, "request body must be a JSON object");
    return body;
}

}  // namespace

SessionRequest parse_session_request(const json& body) {
    require_object(body);
    SessionRequest req;
    if (!body.contains("instruction") || !body["instruction"].is_string() ||
        body["instruction"].get<std::string>().empty()) {
        throw Error(ErrorCode::InvalidInput, "'instruction' must be a non-empty string");
    }
    req.instruction = body["instruction"].get<std::string>();

    if (body.contains("backend")) {
        const auto& b = body["backend"];
        const auto kind = b.is_string() ? backend_kind_from_string(b.get<std::string>()) : std::nullopt;
        if (!kind) throw Error(ErrorCode::InvalidInput, "unknown backend " + dump_json(b));
        req.backend = *kind;
    }
    if (body.contains("ablation")) {
        const auto& a = body["ablation"];
        const auto ablation = a.is_string() ? ablation_from_string(a.get<std::string>()) : std::nullopt;
        if (!ablation) throw Error(ErrorCode::InvalidInput, "unknown ablation " + dump_json(a));
        req.ablation = *ablation;
    }
    if (body.contains("seed")) {
        if (!body["seed"].is_number_unsigned()) throw Error(ErrorCode::InvalidInput, "'seed' must be a non-negative integer");
        req.seed = body["seed"].get<std::uint64_t>();
    }
    if (body.contains("mode")) {
        const auto& m = body["mode"];
        if (m == "auto") {
            req.mode = StepMode::Auto;
        } else if (m == "manual") {
            req.mode = StepMode::Manual;
        } else {
            throw Error(ErrorCode::InvalidInput, "'mode' must be \"auto\" or \"manual\"");
        }
    }
    if (body.contains("faults")) {
        if (!body["faults"].is_array()) throw Error(ErrorCode::InvalidInput, "'faults' must be an array");
        for (const auto& f : body["faults"]) req.faults.push_back(fault_spec_from_json(f));
    }
    if (body.contains("script")) {
        const auto& s = body["script"];
        if (!s.is_array()) throw Error(ErrorCode::InvalidInput, "'script' must be an array of strings");
        for (const auto& turn : s) {
            if (!turn.is_string()) throw Error(ErrorCode::InvalidInput, "'script' must be an array of strings");
            req.script.push_back(turn.get<std::string>());
        }
    }
    if (body.contains("step_delay_ms")) {
        const auto& d = body["step_delay_ms"];
        if (!d.is_number_integer() || d.get<int>() < 0 || d.get<int>() > 60000) {
            throw Error(ErrorCode::InvalidInput, "'step_delay_ms' must be an integer in [0, 60000]");
        }
        req.step_delay_ms = d.get<int>();
    }
    return req;
}

// ---- EventLog ----

void EventLog::publish(json event) {
    {
        std::lock_guard lock(mutex_);
        if (closed_) return;
        event["seq"] = static_cast<std::int64_t>(events_.size()) + 1;
        events_.push_back(std::move(event));
    }
    cv_.notify_all();
}

void EventLog::close() {
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
    }
    cv_.notify_all();
}

std::vector<json> EventLog::read_after(std::int64_t after_seq, std::chrono::milliseconds timeout, bool& closed) const {
    std::unique_lock lock(mutex_);
    const auto ready = [&] { return closed_ || static_cast<std::int64_t>(events_.size()) > after_seq; };
    cv_.wait_for(lock, timeout, ready);
    closed = closed_;
    std::vector<json> out;
    for (auto i = std::max<std::int64_t>(after_seq, 0); i < static_cast<std::int64_t>(events_.size()); ++i) {
        out.push_back(events_[i]);
    }
    return out;
}

std::vector<json> EventLog::snapshot() const {
    std::lock_guard lock(mutex_);
    return events_;
}

std::int64_t EventLog::last_seq() const {
    std::lock_guard lock(mutex_);
    return static_cast<std::int64_t>(events_.size());
}

// ---- ManagedSession ----

ManagedSession::ManagedSession(std::string id, SessionRequest request, std::unique_ptr<Session> session,
                               int step_delay_ms, std::optional<std::filesystem::path> transcript_dir)
    : id_(std::move(id)),
      request_(std::move(request)),
      created_at_(utc_timestamp()),
      step_delay_ms_(step_delay_ms),
      transcript_dir_(std::move(transcript_dir)),
      session_(std::move(session)) {}

ManagedSession::~ManagedSession() { stop(); }

void ManagedSession::start() {
    if (request_.mode != StepMode::Auto || worker_.joinable()) return;
    worker_ = std::jthread([this](std::stop_token st) { worker_loop(st); });
}

void ManagedSession::stop() {
    if (worker_.joinable()) {
        worker_.request_stop();
        worker_.join();
    }
}

void ManagedSession::worker_loop(std::stop_token stop) {
    while (!stop.stop_requested()) {
        {
            std::lock_guard lock(command_mutex_);
            if (session_->closed()) return;
            run_step_locked();
            if (session_->closed()) return;
        }
        // Pace in small slices so stop requests are honoured promptly.
        const auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(step_delay_ms_);
        while (!stop.stop_requested() && std::chrono::steady_clock::now() < until) {
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        if (step_delay_ms_ == 0) std::this_thread::yield();
    }
}

void ManagedSession::run_step_locked() {
    try {
        session_->step();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::SessionClosed) throw;
        // Backend failure: the engine has already recorded the failed step.
    }
    events_.publish({{"type", "step"},
                     {"session_id", id_},
                     {"step", to_json(session_->transcript().steps.back())},
                     {"robot_state", to_json(session_->robot_state())}});
    if (session_->closed()) publish_terminal_locked();
}

void ManagedSession::publish_terminal_locked() {
    const auto& transcript = session_->transcript();
    // Persist before announcing, so a client reacting to the terminal event
    // always finds the file complete.
    if (transcript_dir_) {
        std::filesystem::create_directories(*transcript_dir_);
        const auto path = *transcript_dir_ / (id_ + ".json");
        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << dump_json(to_json(transcript), 2) << '\n';
        }
        std::filesystem::rename(tmp, path);
    }
    events_.publish({{"type", "terminal"},
                     {"session_id", id_},
                     {"terminal", std::string(to_string(*transcript.terminal))},
                     {"steps_taken", transcript.steps.size()},
                     {"robot_state", to_json(session_->robot_state())}});
    events_.close();
}

json ManagedSession::step() {
    std::lock_guard lock(command_mutex_);
    if (request_.mode == StepMode::Auto) throw Error(ErrorCode::ModeConflict, "session " + id_ + " steps automatically");
    if (session_->closed()) throw Error(ErrorCode::SessionClosed, "session " + id_ + " has ended");
    run_step_locked();
    const auto all = events_.snapshot();
    // The step event precedes a terminal event when the step closed the session.
    for (auto it = all.rbegin(); it != all.rend(); ++it) {
        if ((*it)["type"] == "step") return *it;
    }
    return json();
}

void ManagedSession::abort() {
    std::lock_guard lock(command_mutex_);
    session_->abort();  // Error(SessionClosed) when already closed
    publish_terminal_locked();
}

void ManagedSession::inject_fault(FaultSpec fault) {
    std::lock_guard lock(command_mutex_);
    session_->inject_fault(std::move(fault));
}

json ManagedSession::describe() const {
    std::lock_guard lock(command_mutex_);
    const auto& t = session_->transcript();
    return {{"session_id", id_},
            {"created_at", created_at_},
            {"config",
             {{"instruction", request_.instruction},
              {"backend", std::string(sonoagent::to_string(request_.backend))},
              {"ablation", std::string(sonoagent::to_string(request_.ablation))},
              {"seed", request_.seed},
              {"mode", std::string(to_string(request_.mode))}}},
            {"closed", session_->closed()},
            {"terminal", t.terminal ? json(std::string(sonoagent::to_string(*t.terminal))) : json()},
            {"steps_taken", t.steps.size()},
            {"last_seq", events_.last_seq()},
            {"robot_state", to_json(session_->robot_state())},
            {"transcript", to_json(t)}};
}

// ---- SessionManager ----

SessionManager::SessionManager(std::shared_ptr<const KnowledgeIndex> index, std::vector<ApiSpec> registry,
                               ServiceConfig config)
    : index_(std::move(index)), registry_(std::move(registry)), config_(std::move(config)) {
    check_registry(registry_);
    id_salt_ = std::random_device{}() & 0xffffffu;
}

SessionManager::~SessionManager() { shutdown(); }

std::shared_ptr<ManagedSession> SessionManager::create(SessionRequest request) {
    if (shutting_down_) throw Error(ErrorCode::BackendUnavailable, "service is shutting down");
    std::shared_ptr<LlmBackend> backend;
    switch (request.backend) {
        case BackendKind::Scripted:
            if (request.script.empty()) throw Error(ErrorCode::InvalidInput, "scripted backend needs a 'script'");
            backend = std::make_shared<ScriptedBackend>(request.script);
            break;
        case BackendKind::Rule: backend = std::make_shared<RulePolicyBackend>(); break;
        case BackendKind::Remote:
            if (config_.remote.endpoint.empty()) {
                throw Error(ErrorCode::BackendUnavailable, "no remote chat endpoint configured");
            }
            backend = std::make_shared<RemoteChatBackend>(config_.remote);
            break;
    }

    RobotState state = initial_robot_state(request.seed);
    for (const auto& f : request.faults) state.pending_faults.push_back(f);
    SessionOptions options = config_.session_options;
    options.retrieval = RetrievalConfig::for_ablation(request.ablation);
    auto session = start_session(request.instruction, index_, registry_, std::move(backend),
                                 RobotSimulator(std::move(state)), std::move(options));

    char id[40];
    std::snprintf(id, sizeof id, "s%06llx-%06llu", static_cast<unsigned long long>(id_salt_),
                  static_cast<unsigned long long>(next_id_++));
    const int delay = request.step_delay_ms.value_or(config_.default_step_delay_ms);
    auto managed = std::make_shared<ManagedSession>(id, std::move(request), std::move(session), delay,
                                                    config_.transcript_dir);
    {
        std::lock_guard lock(mutex_);
        sessions_.emplace(managed->id(), managed);
    }
    managed->start();
    return managed;
}

std::shared_ptr<ManagedSession> SessionManager::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
    return it->second;
}

json SessionManager::control(const std::string& id, const json& body) {
    auto session = get(id);
    require_object(body);
    const std::string command = body.contains("command") && body["command"].is_string() ? body["command"].get<std::string>() : "";
    json ack = {{"session_id", id}, {"command", command}, {"accepted", true}};
    if (command == "step") {
        ack["event"] = session->step();
    } else if (command == "abort") {
        session->abort();
    } else if (command == "inject_fault") {
        if (!body.contains("fault")) throw Error(ErrorCode::InvalidInput, "inject_fault needs a 'fault' object");
        session->inject_fault(fault_spec_from_json(body["fault"]));
    } else {
        throw Error(ErrorCode::InvalidInput, "'command' must be one of step, abort, inject_fault");
    }
    ack["last_seq"] = session->events().last_seq();
    return ack;
}

void SessionManager::shutdown() {
    shutting_down_ = true;
    std::vector<std::shared_ptr<ManagedSession>> all;
    {
        std::lock_guard lock(mutex_);
        for (auto& [id, s] : sessions_) all.push_back(s);
    }
    for (auto& s : all) s->stop();
}

// ---- HTTP ----

int http_status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::UnknownSession: return 404;
        case ErrorCode::ModeConflict:
        case ErrorCode::SessionClosed: return 409;
        case ErrorCode::BackendUnavailable: return 503;
        case ErrorCode::EmptyIndex:
        case ErrorCode::RemoteError: return 500;
        default: return 400;
    }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(dump_json(body), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, const Error& e) {
    send_json(res, http_status_for(e.code()), {{"error", std::string(to_string(e.code()))}, {"message", e.what()}});
}

json parse_body(const httplib::Request& req) {
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) throw Error(ErrorCode::InvalidInput, "request body is not valid JSON");
    return body;
}

template <class Handler>
auto guarded(Handler handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
        try {
            handler(req, res);
        } catch (const Error& e) {
            send_error(res, e);
        } catch (const json::exception& e) {
            send_json(res, 400, {{"error", "InvalidInput"}, {"message", e.what()}});
        } catch (const std::exception& e) {
            send_json(res, 500, {{"error", "Internal"}, {"message", e.what()}});
        }
    };
}

}  // namespace

SessionServer::SessionServer(std::shared_ptr<SessionManager> manager)
    : manager_(std::move(manager)), server_(std::make_unique<httplib::Server>()) {
    auto& srv = *server_;
    auto mgr = manager_;

    srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

    srv.Get("/api/registry", guarded([mgr](const httplib::Request&, httplib::Response& res) {
                json apis = json::array();
                for (const auto& spec : mgr->registry()) apis.push_back(to_json(spec));
                send_json(res, 200, {{"apis", apis}});
            }));

    srv.Post("/api/sessions", guarded([mgr](const httplib::Request& req, httplib::Response& res) {
                 auto session = mgr->create(parse_session_request(parse_body(req)));
                 send_json(res, 201,
                           {{"session_id", session->id()},
                            {"mode", session->request().mode == StepMode::Auto ? "auto" : "manual"}});
             }));

    srv.Get(R"(/api/sessions/([^/]+))", guarded([mgr](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, mgr->get(req.matches[1])->describe());
            }));

    srv.Post(R"(/api/sessions/([^/]+)/control)", guarded([mgr](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, 200, mgr->control(req.matches[1], parse_body(req)));
             }));

    srv.Get(R"(/api/sessions/([^/]+)/events)", guarded([mgr](const httplib::Request& req, httplib::Response& res) {
                auto session = mgr->get(req.matches[1]);
                res.set_header("Cache-Control", "no-cache");
                auto cursor = std::make_shared<std::int64_t>(0);
                res.set_chunked_content_provider(
                    "text/event-stream", [session, mgr, cursor](std::size_t, httplib::DataSink& sink) {
                        bool closed = false;
                        const auto batch =
                            session->events().read_after(*cursor, std::chrono::milliseconds(100), closed);
                        for (const auto& e : batch) {
                            const std::string frame = "id: " + std::to_string(e["seq"].get<std::int64_t>()) +
                                                      "\nevent: " + e["type"].get<std::string>() +
                                                      "\ndata: " + dump_json(e) + "\n\n";
                            if (!sink.write(frame.data(), frame.size())) return false;
                            *cursor = e["seq"].get<std::int64_t>();
                        }
                        if (closed && *cursor >= session->events().last_seq()) {
                            sink.done();
                            return true;
                        }
                        return !mgr->shutting_down() && sink.is_writable();
                    });
            }));
}

SessionServer::~SessionServer() { stop(); }

bool SessionServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

int SessionServer::start_background(const std::string& host) {
    const int port = server_->bind_to_any_port(host);
    if (port < 0) throw Error(ErrorCode::BackendUnavailable, "cannot bind " + host);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void SessionServer::stop() {
    // Open event streams end once the manager reports shutdown.
    manager_->shutdown();
    server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace sonoagent
