#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "biasaudit/csv.hpp"

using namespace biasaudit;

TEST(Csv, SplitQuoted) {
    const auto row = csv::split_line(R"(a,"b,c","say ""hi""",)");
    ASSERT_EQ(row.size(), 4u);
    EXPECT_EQ(row[0], "a");
    EXPECT_EQ(row[1], "b,c");
    EXPECT_EQ(row[2], "say \"hi\"");
    EXPECT_EQ(row[3], "");
}

TEST(Csv, JoinRoundTrips) {
    const csv::Row row{"x", "1,2", "q\"q", ""};
    EXPECT_EQ(csv::split_line(csv::join(row)), row);
}

TEST(Csv, ParseDouble) {
    EXPECT_EQ(csv::parse_double(" 1.5 "), 1.5);
    EXPECT_EQ(csv::parse_double("+2"), 2.0);
    EXPECT_FALSE(csv::parse_double("abc").has_value());
    EXPECT_FALSE(csv::parse_double("").has_value());
    EXPECT_FALSE(csv::parse_double("1.5x").has_value());
}

TEST(Csv, FormatDoubleRoundTrip) {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) {
        EXPECT_EQ(*csv::parse_double(csv::format_double(v)), v);
    }
    EXPECT_EQ(csv::format_double(std::numeric_limits<double>::infinity()), "inf");
    EXPECT_EQ(csv::format_double(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(Csv, FormatFixedNoNegativeZero) {
    EXPECT_EQ(csv::format_fixed(-0.001, 2), "0.00");
    EXPECT_EQ(csv::format_fixed(0.125, 2), "0.12");
    EXPECT_EQ(csv::format_fixed(-0.116, 3), "-0.116");
}

TEST(Csv, ReadFileStripsBomAndCr) {
    const auto path = std::filesystem::temp_directory_path() / "biasaudit_csv_test.csv";
    csv::write_file(path.string(), "\xEF\xBB\xBFid,v\r\na,1\r\n\r\nb,2\r\n");
    const auto t = csv::read_file(path.string());
    EXPECT_EQ(t.header, (csv::Row{"id", "v"}));
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[1][1], "2");
    std::filesystem::remove(path);
}
