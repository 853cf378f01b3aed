#include "canopy/error.hpp"
#include "canopy/predictor.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

namespace canopy {

namespace {

constexpr std::size_t stderr_tail_limit = 4096;

void close_fd(int& fd) {
    if (fd >= 0) ::close(fd);
    fd = -1;
}

std::string describe_status(int status) {
    if (WIFEXITED(status)) return "exited with status " + std::to_string(WEXITSTATUS(status));
    if (WIFSIGNALED(status)) return "killed by signal " + std::to_string(WTERMSIG(status));
    return "stopped";
}

} // namespace

SubprocessPredictor::SubprocessPredictor(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {}

SubprocessPredictor::~SubprocessPredictor() { stop(); }

void SubprocessPredictor::start() {
    // A dead child must surface as an error, not kill us on write.
    ::signal(SIGPIPE, SIG_IGN);

    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0 ||
        ::pipe2(err_pipe, O_CLOEXEC) != 0) {
        throw PredictorError("cannot create pipes for predictor: " +
                             std::string(std::strerror(errno)));
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
        throw PredictorError("cannot fork predictor: " + std::string(std::strerror(errno)));
    }
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    pid_ = pid;
    stdin_fd_ = in_pipe[1];
    stdout_fd_ = out_pipe[0];
    stderr_fd_ = err_pipe[0];
    pending_.clear();
    stderr_tail_.clear();
}

void SubprocessPredictor::stop() {
    close_fd(stdin_fd_);
    if (pid_ > 0) {
        // Give the process a moment to exit after EOF on stdin.
        int status = 0;
        bool reaped = false;
        for (int i = 0; i < 50 && !reaped; ++i) {
            reaped = ::waitpid(pid_, &status, WNOHANG) == pid_;
            if (!reaped) std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        if (!reaped) {
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, &status, 0);
        }
    }
    pid_ = -1;
    close_fd(stdout_fd_);
    close_fd(stderr_fd_);
}

void SubprocessPredictor::fail(const std::string& what) {
    std::string msg = "predictor '" + command_ + "' " + what;
    if (pid_ > 0) {
        ::kill(pid_, SIGKILL);
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
    // Drain whatever stderr is left for diagnostics.
    if (stderr_fd_ >= 0) {
        char buf[1024];
        ::fcntl(stderr_fd_, F_SETFL, O_NONBLOCK);
        ssize_t n;
        while ((n = ::read(stderr_fd_, buf, sizeof buf)) > 0) stderr_tail_.append(buf, n);
    }
    if (stderr_tail_.size() > stderr_tail_limit) {
        stderr_tail_.erase(0, stderr_tail_.size() - stderr_tail_limit);
    }
    if (!stderr_tail_.empty()) msg += "\n--- predictor stderr ---\n" + stderr_tail_;
    stop();
    throw PredictorError(msg);
}

std::string SubprocessPredictor::read_line(std::chrono::steady_clock::time_point deadline) {
    char buf[65536];
    while (true) {
        const auto nl = pending_.find('\n');
        if (nl != std::string::npos) {
            std::string line = pending_.substr(0, nl);
            pending_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            return line;
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            fail("timed out after " + std::to_string(timeout_.count()) + " ms");
        }
        pollfd fds[2] = {{stdout_fd_, POLLIN, 0}, {stderr_fd_, POLLIN, 0}};
        const int rc = ::poll(fds, 2, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
        if (rc < 0) {
            if (errno == EINTR) continue;
            fail("poll failed: " + std::string(std::strerror(errno)));
        }
        if (fds[1].revents & (POLLIN | POLLHUP)) {
            const ssize_t n = ::read(stderr_fd_, buf, sizeof buf);
            if (n > 0) {
                stderr_tail_.append(buf, static_cast<std::size_t>(n));
                if (stderr_tail_.size() > 2 * stderr_tail_limit) {
                    stderr_tail_.erase(0, stderr_tail_.size() - stderr_tail_limit);
                }
            } else if (n == 0) {
                close_fd(stderr_fd_);
            }
        }
        if (fds[0].revents & (POLLIN | POLLHUP)) {
            const ssize_t n = ::read(stdout_fd_, buf, sizeof buf);
            if (n > 0) {
                pending_.append(buf, static_cast<std::size_t>(n));
            } else if (n == 0) {
                int status = 0;
                std::string how = "still running";
                for (int i = 0; i < 50; ++i) {
                    if (::waitpid(pid_, &status, WNOHANG) == pid_) {
                        how = describe_status(status);
                        pid_ = -1;
                        break;
                    }
                    std::this_thread::sleep_for(std::chrono::milliseconds(10));
                }
                fail("closed its output (" + how + ")");
            }
        }
    }
}

PredictorResponse SubprocessPredictor::predict(const PredictorRequest& request,
                                               const RasterImage& /*tile*/) {
    if (pid_ < 0) start();
    std::string line = serialize_request(request);
    line.push_back('\n');
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
        const ssize_t n = ::write(stdin_fd_, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail("rejected request " + request.request_id + ": " + std::strerror(errno));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    return parse_response(read_line(deadline));
}

} // namespace canopy
