#ifndef TDCAL_CSV_HPP
#define TDCAL_CSV_HPP

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>

#include "errors.hpp"

namespace tdcal {

inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// CSV with a leading metadata comment line; every writer in the project
// goes through this so outputs stay byte-stable.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& meta) : out_(path, std::ios::trunc) {
        if (!out_) throw io_error("cannot open '" + path + "' for writing");
        out_ << "# " << meta << '\n';
        path_ = path;
    }

    void row(std::initializer_list<std::string> cells) {
        bool first = true;
        for (const std::string& c : cells) {
            if (!first) out_ << ',';
            out_ << c;
            first = false;
        }
        out_ << '\n';
    }

    void close() {
        out_.flush();
        if (!out_) throw io_error("write failed for '" + path_ + "'");
        out_.close();
    }

private:
    std::ofstream out_;
    std::string path_;
};

} // namespace tdcal

#endif
