"""
合成数据：场景生成、渲染、样本对采样
"""
