# 空的源模块初始化文件
