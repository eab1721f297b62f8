import os
import subprocess
import sys
from pathlib import Path

import pybind11
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name, sourcedir=""):
        super().__init__(name, sources=[])
        self.sourcedir = os.fspath(Path(sourcedir).resolve())


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        extdir = Path(self.get_ext_fullpath(ext.name)).resolve().parent
        build_temp = Path(self.build_temp) / ext.name
        build_temp.mkdir(parents=True, exist_ok=True)
        config = "Debug" if int(os.environ.get("DEBUG", 0)) else "Release"
        configure = [
            "cmake",
            ext.sourcedir,
            f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={extdir}{os.sep}",
            f"-DCMAKE_BUILD_TYPE={config}",
            f"-DPython_EXECUTABLE={sys.executable}",
            f"-Dpybind11_DIR={pybind11.get_cmake_dir()}",
            "-DCSMF_PYTHON=ON",
        ]
        subprocess.run(configure, cwd=build_temp, check=True)
        build = ["cmake", "--build", ".", "--target", "_csmf", "-j"]
        subprocess.run(build, cwd=build_temp, check=True)


setup(
    ext_modules=[CMakeExtension("csmf._csmf")],
    cmdclass={"build_ext": CMakeBuild},
)
