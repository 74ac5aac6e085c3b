#include "shardex/codec.hpp"

namespace shardex {

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::BadSignature: return "BadSignature";
        case Errc::Unauthorized: return "Unauthorized";
        case Errc::EncodingError: return "EncodingError";
        case Errc::SeqOutOfRange: return "SeqOutOfRange";
        case Errc::CorruptLedger: return "CorruptLedger";
        case Errc::MalformedKey: return "MalformedKey";
        case Errc::UnknownParty: return "UnknownParty";
        case Errc::InactiveOldKey: return "InactiveOldKey";
        case Errc::DuplicateParty: return "DuplicateParty";
        case Errc::InsufficientBalance: return "InsufficientBalance";
        case Errc::UnknownAccount: return "UnknownAccount";
        case Errc::UnknownResource: return "UnknownResource";
        case Errc::UnknownReservation: return "UnknownReservation";
        case Errc::AlreadyTerminal: return "AlreadyTerminal";
        case Errc::MalformedSpec: return "MalformedSpec";
        case Errc::NoMatch: return "NoMatch";
        case Errc::DeadlineExpired: return "DeadlineExpired";
        case Errc::UnknownInstrument: return "UnknownInstrument";
        case Errc::InstrumentSuspended: return "InstrumentSuspended";
        case Errc::UnknownTxn: return "UnknownTxn";
        case Errc::Timeout: return "Timeout";
        case Errc::ParticipantUnreachable: return "ParticipantUnreachable";
        case Errc::UnknownOrder: return "UnknownOrder";
        case Errc::NotOwner: return "NotOwner";
        case Errc::StaleStateVersion: return "StaleStateVersion";
        case Errc::InvalidParams: return "InvalidParams";
        case Errc::MalformedQuery: return "MalformedQuery";
        case Errc::ConfigError: return "ConfigError";
        case Errc::IoError: return "IoError";
    }
    return "UnknownError";
}

std::string to_hex(BytesView b) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(b.size() * 2);
    for (std::uint8_t c : b) {
        s.push_back(digits[c >> 4]);
        s.push_back(digits[c & 0xf]);
    }
    return s;
}

Bytes from_hex(std::string_view hex) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw DecodeError("bad hex digit");
    };
    if (hex.size() % 2 != 0) throw DecodeError("odd hex length");
    Bytes out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        out.push_back(static_cast<std::uint8_t>(nibble(hex[i]) << 4 | nibble(hex[i + 1])));
    }
    return out;
}

Encoder& Encoder::put_bytes(BytesView b) {
    put_frame_len(buf_, static_cast<std::uint32_t>(b.size()));
    buf_.insert(buf_.end(), b.begin(), b.end());
    return *this;
}

Encoder& Encoder::put_u64(std::uint64_t v) {
    put_frame_len(buf_, 8);
    for (int shift = 56; shift >= 0; shift -= 8) {
        buf_.push_back(static_cast<std::uint8_t>(v >> shift));
    }
    return *this;
}

BytesView Decoder::field() {
    if (pos_ + 4 > data_.size()) throw DecodeError("truncated field length");
    std::uint32_t len = read_frame_len(data_, pos_);
    pos_ += 4;
    if (pos_ + len > data_.size()) throw DecodeError("truncated field body");
    BytesView f = data_.subspan(pos_, len);
    pos_ += len;
    return f;
}

Bytes Decoder::get_bytes() {
    BytesView f = field();
    return Bytes(f.begin(), f.end());
}

std::uint64_t Decoder::get_u64() {
    BytesView f = field();
    if (f.size() != 8) throw DecodeError("integer field must be 8 bytes");
    std::uint64_t v = 0;
    for (std::uint8_t c : f) v = (v << 8) | c;
    return v;
}

void put_frame_len(Bytes& out, std::uint32_t len) {
    out.push_back(static_cast<std::uint8_t>(len >> 24));
    out.push_back(static_cast<std::uint8_t>(len >> 16));
    out.push_back(static_cast<std::uint8_t>(len >> 8));
    out.push_back(static_cast<std::uint8_t>(len));
}

std::uint32_t read_frame_len(BytesView b, std::size_t pos) {
    if (pos + 4 > b.size()) throw DecodeError("truncated frame length");
    return (static_cast<std::uint32_t>(b[pos]) << 24) | (static_cast<std::uint32_t>(b[pos + 1]) << 16) |
           (static_cast<std::uint32_t>(b[pos + 2]) << 8) | static_cast<std::uint32_t>(b[pos + 3]);
}

} // namespace shardex
