#include "loadcast/timeseries.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace loadcast {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date (Howard Hinnant's
// civil-days algorithm).
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = static_cast<int>(yy + (m <= 2));
}

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
    static constexpr int kDays[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return kDays[m - 1];
}

int parse_int_field(std::string_view text, std::size_t pos, std::size_t len) {
    int out = 0;
    const char* first = text.data() + pos;
    auto [ptr, ec] = std::from_chars(first, first + len, out);
    if (ec != std::errc() || ptr != first + len)
        throw std::invalid_argument("malformed datetime");
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

}  // namespace

std::int64_t parse_datetime(std::string_view text) {
    // fixed layout: 0123456789...
    //               YYYY-MM-DD HH:MM:SS
    if (text.size() != 19 || text[4] != '-' || text[7] != '-' || text[10] != ' ' ||
        text[13] != ':' || text[16] != ':')
        throw std::invalid_argument("malformed datetime '" + std::string(text) +
                                    "', expected YYYY-MM-DD HH:MM:SS");
    const int y = parse_int_field(text, 0, 4);
    const int mo = parse_int_field(text, 5, 2);
    const int d = parse_int_field(text, 8, 2);
    const int h = parse_int_field(text, 11, 2);
    const int mi = parse_int_field(text, 14, 2);
    const int s = parse_int_field(text, 17, 2);
    if (mo < 1 || mo > 12) throw std::invalid_argument("month out of range in '" +
                                                       std::string(text) + "'");
    if (d < 1 || d > days_in_month(y, mo))
        throw std::invalid_argument("day out of range in '" + std::string(text) + "'");
    if (h > 23 || mi > 59 || s > 59)
        throw std::invalid_argument("time of day out of range in '" + std::string(text) + "'");
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_datetime(std::int64_t epoch_seconds) {
    std::int64_t days = epoch_seconds / 86400;
    std::int64_t rem = epoch_seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    int y, m, d;
    civil_from_days(days, y, m, d);
    const int h = static_cast<int>(rem / 3600);
    const int mi = static_cast<int>(rem / 60 % 60);
    const int s = static_cast<int>(rem % 60);
    char buf[20];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d %02d:%02d:%02d", y, m, d, h, mi, s);
    return buf;
}

std::vector<RawRecord> load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": file is empty");

    std::vector<RawRecord> records;
    std::size_t line_no = 1;  // header consumed above
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view row = trim(line);
        if (row.empty()) continue;
        const std::size_t comma = row.find(',');
        if (comma == std::string_view::npos)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected `datetime,load`");
        RawRecord rec;
        try {
            rec.timestamp = parse_datetime(trim(row.substr(0, comma)));
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const std::string_view load_text = trim(row.substr(comma + 1));
        const char* first = load_text.data();
        auto [ptr, ec] = std::from_chars(first, first + load_text.size(), rec.value);
        if (ec != std::errc() || ptr != first + load_text.size())
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": non-numeric load '" + std::string(load_text) + "'");
        records.push_back(rec);
    }
    if (records.empty()) throw std::runtime_error(path + ": no data rows");
    return records;
}

}  // namespace loadcast
