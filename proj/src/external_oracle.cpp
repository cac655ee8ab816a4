#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <mutex>
#include <sstream>

#include "ma2ml/error.hpp"
#include "ma2ml/oracle.hpp"

extern char** environ;

namespace ma2ml {

namespace {

constexpr std::size_t kStderrKeep = 4096;

void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { ::signal(SIGPIPE, SIG_IGN); });
}

struct Pipe {
  int fd[2] = {-1, -1};
  ~Pipe() {
    for (int f : fd)
      if (f >= 0) ::close(f);
  }
  void close_end(int k) {
    if (fd[k] >= 0) ::close(fd[k]);
    fd[k] = -1;
  }
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

OracleResult parse_oracle_response(const std::string& text) {
  // First non-empty line carries the response document.
  std::istringstream in(text);
  std::string line;
  std::string doc;
  while (std::getline(in, line)) {
    doc = trim(line);
    if (!doc.empty()) break;
  }
  if (doc.empty()) return OracleResult::failure("protocol violation: empty response");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(doc);
  } catch (const nlohmann::json::parse_error& e) {
    return OracleResult::failure(std::string("protocol violation: ") + e.what());
  }
  if (!j.is_object() || !j.contains("accuracy") || !j["accuracy"].is_number())
    return OracleResult::failure("protocol violation: response lacks numeric 'accuracy'");
  OracleResult r;
  r.accuracy = j["accuracy"].get<double>();
  if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0))
    return OracleResult::failure("protocol violation: accuracy outside [0, 1]");
  if (j.contains("cost") && !j["cost"].is_null()) {
    if (!j["cost"].is_number()) return OracleResult::failure("protocol violation: 'cost' is not a number");
    r.cost = j["cost"].get<double>();
    if (!(*r.cost > 0.0) || !std::isfinite(*r.cost))
      return OracleResult::failure("protocol violation: cost must be positive");
  }
  return r;
}

ExternalCommandOracle::ExternalCommandOracle(JointSpace space, std::string command, double timeout_seconds,
                                             std::size_t max_concurrent)
    : space_(std::move(space)),
      command_(std::move(command)),
      timeout_seconds_(timeout_seconds),
      max_concurrent_(max_concurrent) {
  if (command_.empty()) throw ValidationError("external oracle command is empty");
  if (!(timeout_seconds > 0.0)) throw ValidationError("external oracle timeout must be positive");
  if (max_concurrent == 0) throw ValidationError("external oracle concurrency cap must be positive");
  ignore_sigpipe_once();
}

std::string ExternalCommandOracle::describe() const { return "exec(" + command_ + ")"; }

OracleResult ExternalCommandOracle::evaluate(const JointAction& action) const {
  const std::string request = decode_action(space_, action).dump() + "\n";
  {
    std::unique_lock lock(slots_mutex_);
    slots_cv_.wait(lock, [&] { return active_ < max_concurrent_; });
    ++active_;
  }
  OracleResult r;
  try {
    r = run_child(request);
  } catch (...) {
    std::lock_guard lock(slots_mutex_);
    --active_;
    slots_cv_.notify_one();
    throw;
  }
  {
    std::lock_guard lock(slots_mutex_);
    --active_;
  }
  slots_cv_.notify_one();
  return r;
}

OracleResult ExternalCommandOracle::run_child(const std::string& request) const {
  Pipe in, out, err;
  if (::pipe2(in.fd, O_CLOEXEC) != 0 || ::pipe2(out.fd, O_CLOEXEC) != 0 || ::pipe2(err.fd, O_CLOEXEC) != 0)
    return OracleResult::failure(std::string("spawn failure: pipe: ") + std::strerror(errno));

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in.fd[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out.fd[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, err.fd[1], STDERR_FILENO);

  const char* argv[] = {"/bin/sh", "-c", command_.c_str(), nullptr};
  pid_t pid = -1;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, const_cast<char* const*>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) return OracleResult::failure(std::string("spawn failure: ") + std::strerror(rc));

  in.close_end(0);
  out.close_end(1);
  err.close_end(1);
  for (int f : {in.fd[1], out.fd[0], err.fd[0]}) ::fcntl(f, F_SETFL, ::fcntl(f, F_GETFL) | O_NONBLOCK);

  std::string stdout_text, stderr_text;
  std::size_t written = 0;
  bool timed_out = false;
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(timeout_seconds_));
  char buf[4096];

  while (out.fd[0] >= 0 || err.fd[0] >= 0) {
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      timed_out = true;
      break;
    }
    const int wait_ms = static_cast<int>(
        std::min<long long>(1000, std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count() + 1));
    pollfd fds[3];
    nfds_t n = 0;
    int idx_in = -1, idx_out = -1, idx_err = -1;
    if (in.fd[1] >= 0) {
      idx_in = static_cast<int>(n);
      fds[n++] = {in.fd[1], POLLOUT, 0};
    }
    if (out.fd[0] >= 0) {
      idx_out = static_cast<int>(n);
      fds[n++] = {out.fd[0], POLLIN, 0};
    }
    if (err.fd[0] >= 0) {
      idx_err = static_cast<int>(n);
      fds[n++] = {err.fd[0], POLLIN, 0};
    }
    if (::poll(fds, n, wait_ms) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (idx_in >= 0 && fds[idx_in].revents) {
      const ssize_t w = ::write(in.fd[1], request.data() + written, request.size() - written);
      if (w > 0) written += static_cast<std::size_t>(w);
      if (w < 0 && errno != EAGAIN) written = request.size();  // child closed stdin early
      if (written >= request.size()) in.close_end(1);
    }
    auto drain = [&](int idx, Pipe& p, std::string& sink) {
      if (idx < 0 || !fds[idx].revents) return;
      const ssize_t r = ::read(p.fd[0], buf, sizeof buf);
      if (r > 0)
        sink.append(buf, static_cast<std::size_t>(r));
      else if (r == 0 || errno != EAGAIN)
        p.close_end(0);
    };
    drain(idx_out, out, stdout_text);
    drain(idx_err, err, stderr_text);
  }

  int status = 0;
  if (timed_out) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
    return OracleResult::failure("timeout after " + std::to_string(timeout_seconds_) + " s; stderr: " +
                                 stderr_text.substr(0, kStderrKeep));
  }
  // Output closed; give the child until the deadline to exit.
  while (true) {
    const pid_t w = ::waitpid(pid, &status, WNOHANG);
    if (w == pid) break;
    if (w < 0 && errno != EINTR) return OracleResult::failure("waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      return OracleResult::failure("timeout waiting for exit; stderr: " + stderr_text.substr(0, kStderrKeep));
    }
    ::usleep(1000);
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    const std::string how = WIFEXITED(status) ? "exit status " + std::to_string(WEXITSTATUS(status))
                                              : "killed by signal " + std::to_string(WTERMSIG(status));
    return OracleResult::failure(how + "; stderr: " + stderr_text.substr(0, kStderrKeep));
  }
  OracleResult r = parse_oracle_response(stdout_text);
  if (r.failed && !stderr_text.empty()) r.message += "; stderr: " + stderr_text.substr(0, kStderrKeep);
  return r;
}

}  // namespace ma2ml
