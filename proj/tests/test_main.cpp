#include <gtest/gtest.h>

#include "cmdf/log.hpp"

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  cmdf::set_warning_sink([](const std::string&) {});
  return RUN_ALL_TESTS();
}
