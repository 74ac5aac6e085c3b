#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace shardex {

enum class Errc {
    BadSignature,
    Unauthorized,
    EncodingError,
    SeqOutOfRange,
    CorruptLedger,
    MalformedKey,
    UnknownParty,
    InactiveOldKey,
    DuplicateParty,
    InsufficientBalance,
    UnknownAccount,
    UnknownResource,
    UnknownReservation,
    AlreadyTerminal,
    MalformedSpec,
    NoMatch,
    DeadlineExpired,
    UnknownInstrument,
    InstrumentSuspended,
    UnknownTxn,
    Timeout,
    ParticipantUnreachable,
    UnknownOrder,
    NotOwner,
    StaleStateVersion,
    InvalidParams,
    MalformedQuery,
    ConfigError,
    IoError,
};

const char* errc_name(Errc c);

struct Error {
    Errc code;
    std::string detail;

    std::string to_string() const {
        std::string s = errc_name(code);
        if (!detail.empty()) {
            s += ": ";
            s += detail;
        }
        return s;
    }
};

// Domain rejections are values, not exceptions: managers report them to callers
// while leaving state untouched.
template <typename T>
class Expected {
public:
    Expected(T value) : v_(std::move(value)) {}
    Expected(Error err) : v_(std::move(err)) {}
    Expected(Errc code, std::string detail = {}) : v_(Error{code, std::move(detail)}) {}

    bool ok() const { return std::holds_alternative<T>(v_); }
    explicit operator bool() const { return ok(); }

    const T& value() const& {
        if (!ok()) throw std::runtime_error("Expected::value on error: " + error().to_string());
        return std::get<T>(v_);
    }
    T& value() & {
        if (!ok()) throw std::runtime_error("Expected::value on error: " + error().to_string());
        return std::get<T>(v_);
    }
    const Error& error() const {
        return std::get<Error>(v_);
    }
    const T& operator*() const& { return value(); }
    const T* operator->() const { return &value(); }

private:
    std::variant<T, Error> v_;
};

struct Unit {};
using Status = Expected<Unit>;

inline Status ok_status() { return Status(Unit{}); }

} // namespace shardex
